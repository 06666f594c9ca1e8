#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moext/layers.hpp"

namespace moext::nn {

// Widths of every stage. The defaults are the full-size network; reduced()
// divides all widths for fast experiments and gradient checks.
struct ModelConfig {
  std::array<int, 4> backbone_widths{64, 128, 256, 512};
  int branch_width = 512;
  int feature_dim = 512;
  // Reconstructor channel sequence: 512 (four upsampling convolutions), 256, 128, 64,
  // then the refinement conv blocks.
  std::array<int, 5> recon_widths{512, 256, 128, 64, 32};
  int refine_blocks = 5;
  int num_classes = 5;
  int image_size = 224;
  bool use_motion_extractor = true;
  // Multiplies the fan-in initialisation of the two branch output layers.
  // Keeps initial feature distances on the scale of the contrastive margin.
  double feature_init_gain = 0.02;

  static ModelConfig reduced(int divisor);
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Which sub-networks exist. The finetune network drops the texture branch,
// the reconstructor and the projection head.
struct NetParts {
  bool texture = true;
  bool reconstructor = true;
  bool projector = true;
  bool classifier = false;

  static NetParts pretrain() { return {true, true, true, false}; }
  static NetParts finetune() { return {false, false, false, true}; }
  static NetParts all() { return {true, true, true, true}; }
};

// Parameter snapshot, always stored as 32-bit floats.
struct NamedArray {
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};
using StateDict = std::map<std::string, NamedArray>;

struct LoadReport {
  std::vector<std::string> ignored;  // present in the snapshot, absent from the network
  std::vector<std::string> missing;  // present in the network, absent from the snapshot
};

template <typename T>
struct SeparatedFeatures {
  Tensor<T> shape;    // n x d x 1 x 1
  Tensor<T> texture;  // empty when the texture branch is absent
};

template <typename T>
struct PretrainOutputs {
  Tensor<T> reconstruction;
  Tensor<T> shape_onset, shape_apex;
  Tensor<T> texture_onset, texture_apex;
  Tensor<T> motion;
};

template <typename T>
struct PretrainGrads {
  Tensor<T> reconstruction;  // may be empty
  Tensor<T> shape_onset, shape_apex, texture_onset, texture_apex;  // each may be empty
};

// Expected reconstructor shape trace (per sample) for a configuration.
std::vector<Shape> expected_recon_trace(const ModelConfig& cfg);

template <typename T>
class MoExtNet {
 public:
  MoExtNet(const ModelConfig& cfg, const NetParts& parts);
  MoExtNet(const MoExtNet&) = delete;
  MoExtNet& operator=(const MoExtNet&) = delete;

  void init(std::uint64_t seed);
  const ModelConfig& config() const { return cfg_; }
  const NetParts& parts() const { return parts_; }

  // Feature separator: backbone, then the shape and (if present) texture branches.
  SeparatedFeatures<T> separate_features(const Tensor<T>& x, Mode mode);
  // Returns the gradient with respect to the separator input.
  Tensor<T> separate_backward(const Tensor<T>& grad_shape, const Tensor<T>* grad_texture);

  // M = C2(concat(C1(|S_a - S_o|), S_a)); with the motion extractor disabled M = |S_a - S_o|.
  Tensor<T> extract_motion(const Tensor<T>& shape_onset, const Tensor<T>& shape_apex, Mode mode);
  std::pair<Tensor<T>, Tensor<T>> extract_motion_backward(const Tensor<T>& grad_motion);

  // Decodes concat(M, T_o) into an image; the shape trace is asserted on every call.
  Tensor<T> reconstruct_apex(const Tensor<T>& motion, const Tensor<T>& texture_onset, Mode mode);
  std::pair<Tensor<T>, Tensor<T>> reconstruct_backward(const Tensor<T>& grad_image);
  const std::vector<Shape>& recon_trace() const { return recon_trace_; }

  Tensor<T> project(const Tensor<T>& v);
  Tensor<T> project_backward(const Tensor<T>& grad);

  // Softmax probabilities; the logits are kept for classify_backward.
  Tensor<T> classify(const Tensor<T>& motion, Mode mode);
  Tensor<T> classify_backward(const Tensor<T>& grad_logits);

  PretrainOutputs<T> forward_pretrain(const Tensor<T>& onset, const Tensor<T>& apex, Mode mode);
  void backward_pretrain(const PretrainGrads<T>& grads);

  Tensor<T> forward_classify(const Tensor<T>& onset, const Tensor<T>& apex, Mode mode);
  void backward_classify(const Tensor<T>& grad_logits);

  StateRefs<T>& state() { return refs_; }
  void zero_grad();
  std::size_t parameter_count() const;

  StateDict state_dict() const;
  LoadReport load_state_dict(const StateDict& state);

  // Direct access for tests and tools.
  Sequential<T>& backbone() { return *backbone_; }
  Sequential<T>& shape_branch() { return *shape_branch_; }
  Sequential<T>* texture_branch() { return texture_branch_.get(); }
  Sequential<T>& motion_c1() { return *motion_c1_; }
  Sequential<T>& motion_c2() { return *motion_c2_; }
  Sequential<T>* reconstructor() { return reconstructor_.get(); }
  Sequential<T>* projector() { return projector_.get(); }
  Sequential<T>* classifier() { return classifier_.get(); }

 private:
  ModelConfig cfg_;
  NetParts parts_;
  std::unique_ptr<Sequential<T>> backbone_, shape_branch_, texture_branch_;
  std::unique_ptr<Sequential<T>> motion_c1_, motion_c2_;
  std::unique_ptr<Sequential<T>> reconstructor_, projector_, classifier_;
  StateRefs<T> refs_;

  Tensor<T> delta_sign_;  // sign(S_a - S_o) from the last extract_motion
  int separated_batch_ = 0;
  int pair_batch_ = 0;
  std::vector<Shape> recon_trace_;
  Tensor<T> logits_;
};

}  // namespace moext::nn
