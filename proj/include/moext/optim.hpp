#pragma once

#include <vector>

#include "moext/layers.hpp"

namespace moext::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled from the gradient
};

// Adaptive-moment optimizer with decoupled weight decay. Per step and element:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<ParamRef<T>> params, AdamConfig cfg);

  void step();
  int steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<ParamRef<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  int t_ = 0;
};

}  // namespace moext::nn
