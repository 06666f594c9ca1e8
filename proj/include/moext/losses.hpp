#pragma once

#include <functional>
#include <span>

#include <Eigen/Core>

#include "moext/tensor.hpp"

namespace moext::losses {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct LossConfig {
  double epsilon = 0.3;  // margin, must lie in [0.2, 0.5]
  double alpha_st = 0.5;
  double alpha_ss = 1.0;
  int m = 3;  // expansion-set size

  void validate() const;
};

enum class FrameSet { Onset, Apex };

// Shape and texture features of n input sets with 2m instances each. Row
// i * 2m + j holds instance j of set i; instances j < m come from the onset
// expansion set, j >= m from the apex expansion set.
template <typename T>
struct PretrainBatch {
  Matrix<T> shape;
  Matrix<T> texture;
  int n = 0;
  int m = 0;

  int row(int set, int instance) const { return set * 2 * m + instance; }
  FrameSet label(int instance) const { return instance < m ? FrameSet::Onset : FrameSet::Apex; }
  void validate() const;
};

// Maps a block of row vectors into the embedding space.
template <typename T>
using Projector = std::function<Matrix<T>(const Matrix<T>&)>;

// Mean absolute per-pixel difference, averaged over the batch.
template <typename T>
T reconstruction_loss(const Tensor<T>& target, const Tensor<T>& reconstruction);
// d loss / d reconstruction; the zero branch is taken where the pixels agree.
template <typename T>
Tensor<T> reconstruction_loss_grad(const Tensor<T>& target, const Tensor<T>& reconstruction);

// Element-wise mean of every shape feature in the batch.
template <typename T>
RowVector<T> mean_shape_anchor(const Matrix<T>& shape);

// Shape/texture contrastive hinge, with the batch anchor f(mean S).
template <typename T>
T st_loss(const PretrainBatch<T>& batch, const Projector<T>& projector, const LossConfig& cfg);
// Onset/apex shape contrastive loss over all ordered instance pairs of each set.
template <typename T>
T ss_loss(const PretrainBatch<T>& batch, const Projector<T>& projector, const LossConfig& cfg);

template <typename T>
struct StResult {
  T value{};
  Matrix<T> grad_shape;    // d / d f(S)
  Matrix<T> grad_texture;  // d / d f(T)
  RowVector<T> grad_anchor;  // d / d f(mean S)
};

// Same loss evaluated on already-projected embeddings, with gradients.
template <typename T>
StResult<T> st_loss_embedded(const Matrix<T>& shape_emb, const Matrix<T>& texture_emb,
                             const RowVector<T>& anchor_emb, int n, int m, const LossConfig& cfg);

template <typename T>
struct SsResult {
  T value{};
  Matrix<T> grad_shape;
};

template <typename T>
SsResult<T> ss_loss_embedded(const Matrix<T>& shape_emb, int n, int m, const LossConfig& cfg);

double total_pretrain_loss(double l_re, double l_st, double l_ss, const LossConfig& cfg);

struct CrossEntropyResult {
  double value = 0.0;
  int clamped = 0;  // rows whose true-class probability hit the floor
};

inline constexpr double kProbabilityFloor = 1e-12;

template <typename T>
CrossEntropyResult cross_entropy(const Tensor<T>& probabilities, std::span<const int> labels);
// Gradient of the mean cross-entropy with respect to the logits that produced
// the probabilities: (p - onehot) / batch.
template <typename T>
Tensor<T> cross_entropy_grad_logits(const Tensor<T>& probabilities, std::span<const int> labels);

}  // namespace moext::losses
