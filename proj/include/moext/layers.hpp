#pragma once

#include <memory>
#include <string>
#include <vector>

#include "moext/rng.hpp"
#include "moext/tensor.hpp"

namespace moext::nn {

enum class Mode { Train, Eval };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

// Non-learnable state that still belongs in a checkpoint (normalization statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

template <typename T>
struct StateRefs {
  std::vector<ParamRef<T>> params;
  std::vector<BufferRef<T>> buffers;
};

// A differentiable layer. forward() caches what backward() needs; backward()
// accumulates parameter gradients and returns the input gradient. One
// forward must precede each backward.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect(const std::string& /*prefix*/, StateRefs<T>& /*refs*/) {}
  virtual void init(Rng& /*rng*/) {}
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel = 3);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, StateRefs<T>& refs) override;
  void init(Rng& rng) override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  int in_, out_, k_, pad_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.9, double eps = 1e-5);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, StateRefs<T>& refs) override;
  void init(Rng& rng) override;

  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  int channels_;
  double momentum_, eps_;
  Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
  Mode last_mode_ = Mode::Eval;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Tensor<T> output_;
};

// 2x2 max pooling, stride 2.
template <typename T>
class MaxPool2 final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

template <typename T>
class AvgPool final : public Layer<T> {
 public:
  AvgPool(int kernel, int stride) : k_(kernel), s_(stride) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  int k_, s_;
  Shape in_shape_{};
};

// Nearest-neighbour upsampling by 2.
template <typename T>
class Upsample2 final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Shape in_shape_{};
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Shape in_shape_{};
};

// Fully connected on the flattened per-sample input; output n x out x 1 x 1.
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, StateRefs<T>& refs) override;
  void init(Rng& rng) override;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  int in_, out_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> input_;
};

// Ordered, named container. Forward checks every intermediate for non-finite
// values and names the offending layer; output shapes of the last forward
// are kept for architecture assertions.
template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential& add(std::string name, std::unique_ptr<Layer<T>> layer);
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(name), std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, StateRefs<T>& refs) override;
  void init(Rng& rng) override;

  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i].second; }
  const std::string& name(std::size_t i) const { return layers_[i].first; }
  const std::vector<Shape>& output_shapes() const { return output_shapes_; }
  void set_label(std::string label) { label_ = std::move(label); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
  std::vector<Shape> output_shapes_;
  std::string label_;
};

// Two units of (3x3 convolution stride 1 padding 1, batch normalization, ReLU);
// spatial size is preserved.
template <typename T>
std::unique_ptr<Sequential<T>> make_conv_block(int in_channels, int out_channels);

// Row-wise softmax over an n x k x 1 x 1 tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace moext::nn
