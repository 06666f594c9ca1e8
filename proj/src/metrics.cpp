#include "moext/metrics.hpp"

#include <numeric>

#include <spdlog/spdlog.h>

#include "moext/errors.hpp"

namespace moext::eval {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names)
    : names_(std::move(class_names)), counts_(names_.size() * names_.size(), 0) {}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names,
                                 std::vector<std::vector<long>> counts)
    : ConfusionMatrix(std::move(class_names)) {
  if (static_cast<int>(counts.size()) != classes()) throw ShapeError("confusion matrix row count");
  for (int i = 0; i < classes(); ++i) {
    if (static_cast<int>(counts[i].size()) != classes()) throw ShapeError("confusion matrix column count");
    for (int j = 0; j < classes(); ++j) add(i, j, counts[i][j]);
  }
}

void ConfusionMatrix::add(int truth, int predicted, long count) {
  if (truth < 0 || truth >= classes() || predicted < 0 || predicted >= classes())
    throw ShapeError("confusion matrix index out of range");
  if (count < 0) throw ShapeError("confusion matrix counts must be non-negative");
  counts_[truth * classes() + predicted] += count;
}

long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

long ConfusionMatrix::true_count(int cls) const {
  long s = 0;
  for (int j = 0; j < classes(); ++j) s += count(cls, j);
  return s;
}

long ConfusionMatrix::predicted_count(int cls) const {
  long s = 0;
  for (int i = 0; i < classes(); ++i) s += count(i, cls);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.names_ != names_) throw SchemaError("cannot add confusion matrices with different classes");
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
  return *this;
}

std::vector<std::vector<long>> ConfusionMatrix::rows() const {
  std::vector<std::vector<long>> out(classes(), std::vector<long>(classes()));
  for (int i = 0; i < classes(); ++i)
    for (int j = 0; j < classes(); ++j) out[i][j] = count(i, j);
  return out;
}

nlohmann::json ConfusionMatrix::to_json() const {
  return {{"classes", names_}, {"counts", rows()}};
}

namespace {

MetricValue macro_average(const ConfusionMatrix& cm, const char* metric, bool f1) {
  if (cm.classes() == 0) throw ShapeError("metric on an empty confusion matrix");
  MetricValue r;
  double sum = 0.0;
  for (int c = 0; c < cm.classes(); ++c) {
    const long tp = cm.count(c, c);
    const long fn = cm.true_count(c) - tp;
    const long fp = cm.predicted_count(c) - tp;
    if (tp + fn == 0) {
      r.warnings.push_back(std::string(metric) + ": class '" + cm.class_names()[c] +
                           "' has no true samples and is excluded");
      continue;
    }
    ++r.effective_classes;
    if (f1) {
      const long denom = 2 * tp + fp + fn;
      sum += denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom);
    } else {
      sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
  }
  for (const auto& w : r.warnings) spdlog::warn("{}", w);
  if (r.effective_classes == 0) throw ShapeError(std::string(metric) + ": no class has true samples");
  r.value = sum / r.effective_classes;
  return r;
}

}  // namespace

MetricValue uar_detailed(const ConfusionMatrix& cm) { return macro_average(cm, "UAR", false); }

MetricValue uf1_detailed(const ConfusionMatrix& cm) { return macro_average(cm, "UF1", true); }

double acc(const ConfusionMatrix& cm) {
  const long n = cm.total();
  if (n == 0) throw ShapeError("accuracy of an empty confusion matrix");
  long correct = 0;
  for (int c = 0; c < cm.classes(); ++c) correct += cm.count(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace moext::eval
