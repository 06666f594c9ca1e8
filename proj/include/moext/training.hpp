#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moext/checkpoint.hpp"
#include "moext/data.hpp"
#include "moext/image.hpp"
#include "moext/losses.hpp"
#include "moext/model.hpp"

namespace moext::train {

// Switches for the ablation study. Each one removes a component.
struct Ablation {
  bool use_pretrained = true;
  bool use_macro_data = true;
  bool use_motion_extractor = true;
  bool use_st_loss = true;
  bool use_ss_loss = true;

  bool operator==(const Ablation&) const = default;
};

struct TrainConfig {
  Phase phase = Phase::Pretrain;
  int batch_size = 20;  // pretrain: input sets per batch; finetune: clip pairs
  int epochs = 30;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 0;
  losses::LossConfig loss;
  Ablation ablation;
  int macro_pseudo_apex_n = data::kDefaultPseudoApexFrame;
  bool augment = true;  // finetune: mirror + 8 rotations per pair

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Onset/apex frames of one clip, already aligned and cropped.
struct Clip {
  ImageTensor onset;
  ImageTensor apex;
  int label = -1;  // index into the manifest's label schema
  std::string subject_id;
  std::string clip_id;
  bool is_macro = false;
};

// Loads the onset and resolved apex frame of every sample. Frames must have
// the model's input size (run preprocessing first).
std::vector<Clip> load_clips(const data::Manifest& manifest, int macro_pseudo_apex_n, int image_size = kImageSize);

struct Hooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // When set, the checkpoint is written here after every finished epoch, so a
  // run aborted by a non-finite loss leaves the last good state behind.
  std::optional<std::filesystem::path> last_good;
};

// Micro clips plus (unless ablated) macro clips, in manifest order.
std::vector<Clip> pretrain_set(const TrainConfig& cfg, const std::vector<data::Manifest>& manifests,
                               int image_size = kImageSize);

Checkpoint pretrain(const TrainConfig& cfg, const nn::ModelConfig& model, const std::vector<Clip>& clips,
                    const Hooks& hooks = {});
Checkpoint pretrain(const TrainConfig& cfg, const nn::ModelConfig& model,
                    const std::vector<data::Manifest>& manifests, const Hooks& hooks = {});

// `pretrained` may be null only when the use_pretrained ablation is off.
// `model` supplies widths when no checkpoint is used; num_classes must match
// the number of classes the clips are labelled with.
Checkpoint finetune(const TrainConfig& cfg, const Checkpoint* pretrained, const nn::ModelConfig& model,
                    const std::vector<Clip>& clips, const Hooks& hooks = {});
Checkpoint finetune(const TrainConfig& cfg, const Checkpoint* pretrained, const nn::ModelConfig& model,
                    const data::Manifest& micro, const Hooks& hooks = {});

// Network ready for inference from a finetune checkpoint.
std::unique_ptr<nn::MoExtNet<float>> classifier_from(const Checkpoint& ckpt);
// Arg-max predictions in evaluation mode.
std::vector<int> predict(nn::MoExtNet<float>& net, const std::vector<Clip>& clips, int batch_size = 16);

// Cross-entropy of a freshly initialised finetune network on a batch, before
// any update. Differs between the two use_pretrained settings.
double initial_finetune_loss(const TrainConfig& cfg, const Checkpoint* pretrained, const nn::ModelConfig& model,
                             const std::vector<Clip>& clips);

struct ObjectiveValue {
  double l_re = 0, l_st = 0, l_ss = 0, total = 0;
};

// Pre-training objective on one batch of nb input sets. onset/apex hold the
// expansion-set instances with instance j of set i at row i * m + j. With
// `backward` set, parameter gradients of the total (ablated) loss are
// accumulated into the network.
template <typename T>
ObjectiveValue pretrain_objective(nn::MoExtNet<T>& net, const Tensor<T>& onset, const Tensor<T>& apex, int nb,
                                  const losses::LossConfig& loss, const Ablation& ablation, bool backward);

void write_history_csv(const std::vector<EpochRecord>& history, Phase phase, const std::filesystem::path& path);

}  // namespace moext::train
