#include "moext/losses.hpp"

#include <cmath>
#include <string>

namespace moext::losses {

void LossConfig::validate() const {
  if (!(epsilon >= 0.2 && epsilon <= 0.5))
    throw ConfigError("epsilon must lie in [0.2, 0.5], got " + std::to_string(epsilon));
  if (!(alpha_st >= 0.0 && alpha_st <= 1.0) || !(alpha_ss >= 0.0 && alpha_ss <= 1.0))
    throw ConfigError("loss weights must lie in [0, 1]");
  if (m < 1) throw ConfigError("expansion-set size must be >= 1");
}

template <typename T>
void PretrainBatch<T>::validate() const {
  if (n < 1 || m < 1) throw ShapeError("pretrain batch needs n >= 1 and m >= 1");
  const auto rows = static_cast<Eigen::Index>(n) * 2 * m;
  if (shape.rows() != rows) throw ShapeError("shape features must have n * 2m rows");
  if (texture.size() != 0 && (texture.rows() != rows || texture.cols() != shape.cols()))
    throw ShapeError("texture features must match shape features");
}

template <typename T>
T reconstruction_loss(const Tensor<T>& target, const Tensor<T>& reconstruction) {
  if (!(target.shape() == reconstruction.shape()))
    throw ShapeError("reconstruction loss: " + target.shape().str() + " vs " +
                     reconstruction.shape().str());
  if (target.empty()) throw ShapeError("reconstruction loss on empty batch");
  double acc = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k)
    acc += std::abs(static_cast<double>(target.data()[k]) - reconstruction.data()[k]);
  return static_cast<T>(acc / static_cast<double>(target.size()));
}

template <typename T>
Tensor<T> reconstruction_loss_grad(const Tensor<T>& target, const Tensor<T>& reconstruction) {
  if (!(target.shape() == reconstruction.shape())) throw ShapeError("reconstruction loss grad shape");
  Tensor<T> g(target.shape());
  const T w = T(1) / static_cast<T>(target.size());
  for (std::size_t k = 0; k < target.size(); ++k) {
    const T d = reconstruction.data()[k] - target.data()[k];
    g.data()[k] = d > T(0) ? w : (d < T(0) ? -w : T(0));
  }
  return g;
}

template <typename T>
RowVector<T> mean_shape_anchor(const Matrix<T>& shape) {
  if (shape.rows() == 0) throw ShapeError("mean shape anchor of an empty batch");
  return shape.colwise().mean();
}

template <typename T>
StResult<T> st_loss_embedded(const Matrix<T>& shape_emb, const Matrix<T>& texture_emb,
                             const RowVector<T>& anchor_emb, int n, int m, const LossConfig& cfg) {
  const auto rows = static_cast<Eigen::Index>(n) * 2 * m;
  if (shape_emb.rows() != rows || texture_emb.rows() != rows ||
      texture_emb.cols() != shape_emb.cols() || anchor_emb.cols() != shape_emb.cols())
    throw ShapeError("st loss: embedding shapes disagree");
  StResult<T> r;
  r.grad_shape = Matrix<T>::Zero(rows, shape_emb.cols());
  r.grad_texture = Matrix<T>::Zero(rows, shape_emb.cols());
  r.grad_anchor = RowVector<T>::Zero(shape_emb.cols());
  const T w = T(1) / static_cast<T>(rows);
  const T eps = static_cast<T>(cfg.epsilon);
  T total = 0;
  for (Eigen::Index k = 0; k < rows; ++k) {
    const RowVector<T> to_anchor = shape_emb.row(k) - anchor_emb;
    const RowVector<T> to_texture = shape_emb.row(k) - texture_emb.row(k);
    const T d_anchor = to_anchor.norm();
    const T d_texture = to_texture.norm();
    const T term = d_anchor - d_texture + eps;
    if (term <= T(0)) continue;
    total += term;
    if (d_anchor > T(0)) {
      r.grad_shape.row(k) += w * to_anchor / d_anchor;
      r.grad_anchor -= w * to_anchor / d_anchor;
    }
    if (d_texture > T(0)) {
      r.grad_shape.row(k) -= w * to_texture / d_texture;
      r.grad_texture.row(k) += w * to_texture / d_texture;
    }
  }
  r.value = total * w;
  return r;
}

template <typename T>
SsResult<T> ss_loss_embedded(const Matrix<T>& shape_emb, int n, int m, const LossConfig& cfg) {
  const int per_set = 2 * m;
  if (shape_emb.rows() != static_cast<Eigen::Index>(n) * per_set)
    throw ShapeError("ss loss: expected n * 2m rows");
  SsResult<T> r;
  r.grad_shape = Matrix<T>::Zero(shape_emb.rows(), shape_emb.cols());
  const T w = T(1) / (static_cast<T>(n) * per_set * per_set);
  const T eps = static_cast<T>(cfg.epsilon);
  T total = 0;
  for (int i = 0; i < n; ++i) {
    const int base = i * per_set;
    // The (j, k) and (k, j) terms are equal, so each unordered pair is visited once
    // and counted twice; the diagonal contributes zero.
    for (int j = 0; j < per_set; ++j) {
      for (int k = j + 1; k < per_set; ++k) {
        const RowVector<T> diff = shape_emb.row(base + j) - shape_emb.row(base + k);
        const T d = diff.norm();
        const bool same = (j < m) == (k < m);
        if (same) {
          total += 2 * d;
          if (d > T(0)) {
            r.grad_shape.row(base + j) += 2 * w * diff / d;
            r.grad_shape.row(base + k) -= 2 * w * diff / d;
          }
        } else if (eps - d > T(0)) {
          total += 2 * (eps - d);
          if (d > T(0)) {
            r.grad_shape.row(base + j) -= 2 * w * diff / d;
            r.grad_shape.row(base + k) += 2 * w * diff / d;
          }
        }
      }
    }
  }
  r.value = total * w;
  return r;
}

template <typename T>
T st_loss(const PretrainBatch<T>& batch, const Projector<T>& projector, const LossConfig& cfg) {
  batch.validate();
  if (batch.texture.rows() != batch.shape.rows()) throw ShapeError("st loss needs texture features");
  const Matrix<T> anchor = mean_shape_anchor<T>(batch.shape);
  const Matrix<T> shape_emb = projector(batch.shape);
  const Matrix<T> texture_emb = projector(batch.texture);
  const RowVector<T> anchor_emb = projector(anchor).row(0);
  return st_loss_embedded<T>(shape_emb, texture_emb, anchor_emb, batch.n, batch.m, cfg).value;
}

template <typename T>
T ss_loss(const PretrainBatch<T>& batch, const Projector<T>& projector, const LossConfig& cfg) {
  batch.validate();
  return ss_loss_embedded<T>(projector(batch.shape), batch.n, batch.m, cfg).value;
}

double total_pretrain_loss(double l_re, double l_st, double l_ss, const LossConfig& cfg) {
  if (!std::isfinite(l_re) || !std::isfinite(l_st) || !std::isfinite(l_ss))
    throw NumericError("non-finite loss component");
  return l_re + cfg.alpha_st * l_st + cfg.alpha_ss * l_ss;
}

template <typename T>
CrossEntropyResult cross_entropy(const Tensor<T>& probabilities, std::span<const int> labels) {
  const int n = probabilities.n();
  const int classes = static_cast<int>(probabilities.shape().per_sample());
  if (static_cast<int>(labels.size()) != n) throw ShapeError("cross entropy: label count mismatch");
  if (n == 0) throw ShapeError("cross entropy on empty batch");
  CrossEntropyResult r;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ShapeError("cross entropy: label " + std::to_string(labels[i]) + " out of range");
    double p = probabilities(i, labels[i]);
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      ++r.clamped;
    }
    acc -= std::log(p);
  }
  r.value = acc / n;
  return r;
}

template <typename T>
Tensor<T> cross_entropy_grad_logits(const Tensor<T>& probabilities, std::span<const int> labels) {
  const int n = probabilities.n();
  Tensor<T> g = probabilities;
  for (int i = 0; i < n; ++i) g(i, labels[i]) -= T(1);
  for (auto& v : g.vec()) v /= static_cast<T>(n);
  return g;
}

#define MOEXT_INSTANTIATE(T)                                                                      \
  template struct PretrainBatch<T>;                                                               \
  template T reconstruction_loss(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> reconstruction_loss_grad(const Tensor<T>&, const Tensor<T>&);                \
  template RowVector<T> mean_shape_anchor(const Matrix<T>&);                                      \
  template StResult<T> st_loss_embedded(const Matrix<T>&, const Matrix<T>&, const RowVector<T>&, \
                                        int, int, const LossConfig&);                             \
  template SsResult<T> ss_loss_embedded(const Matrix<T>&, int, int, const LossConfig&);          \
  template T st_loss(const PretrainBatch<T>&, const Projector<T>&, const LossConfig&);            \
  template T ss_loss(const PretrainBatch<T>&, const Projector<T>&, const LossConfig&);            \
  template CrossEntropyResult cross_entropy(const Tensor<T>&, std::span<const int>);              \
  template Tensor<T> cross_entropy_grad_logits(const Tensor<T>&, std::span<const int>);

MOEXT_INSTANTIATE(float)
MOEXT_INSTANTIATE(double)
#undef MOEXT_INSTANTIATE

}  // namespace moext::losses
