#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace moext::eval {

// C x C counts; rows are the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> class_names);
  ConfusionMatrix(std::vector<std::string> class_names, std::vector<std::vector<long>> counts);

  void add(int truth, int predicted, long count = 1);
  long count(int truth, int predicted) const { return counts_[truth * classes() + predicted]; }
  int classes() const { return static_cast<int>(names_.size()); }
  long total() const;
  long true_count(int cls) const;       // TP + FN
  long predicted_count(int cls) const;  // TP + FP
  const std::vector<std::string>& class_names() const { return names_; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

  std::vector<std::vector<long>> rows() const;
  nlohmann::json to_json() const;

 private:
  std::vector<std::string> names_;
  std::vector<long> counts_;
};

struct MetricValue {
  double value = 0.0;
  int effective_classes = 0;  // classes that entered the macro average
  std::vector<std::string> warnings;
};

// Unweighted average recall. Classes without true samples are left out of the
// average and reported in the warnings.
MetricValue uar_detailed(const ConfusionMatrix& cm);
// Unweighted F1: mean of 2TP / (2TP + FP + FN) over classes with true samples.
MetricValue uf1_detailed(const ConfusionMatrix& cm);
// Overall fraction correct, trace / N.
double acc(const ConfusionMatrix& cm);

inline double uar(const ConfusionMatrix& cm) { return uar_detailed(cm).value; }
inline double uf1(const ConfusionMatrix& cm) { return uf1_detailed(cm).value; }

}  // namespace moext::eval
