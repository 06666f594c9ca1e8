#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moext/checkpoint.hpp"
#include "moext/data.hpp"
#include "moext/metrics.hpp"
#include "moext/model.hpp"
#include "moext/training.hpp"

namespace moext::eval {

// SDE_SYNTH runs the single-database protocol on generated data with its
// native classes.
enum class Protocol { SDE_CASME2_5, SDE_SAMM_5, SDE_CASME3_3, CDE_3, SDE_SYNTH };

std::string to_string(Protocol p);
Protocol parse_protocol(std::string_view text);  // ConfigError when unknown
std::vector<data::DatasetId> protocol_datasets(Protocol p);
// Default target classes, in report order.
std::vector<std::string> protocol_classes(Protocol p);

struct MappedManifest {
  data::Manifest manifest;                 // label_schema is the protocol's class list
  std::map<std::string, int> excluded;     // source label -> samples dropped
  int excluded_total() const;
};

// Relabels a dataset manifest for a protocol. Samples whose label has no
// target class are dropped and counted. `classes` overrides the SDE 5-class
// lists (labels outside it are dropped); other protocols ignore it.
MappedManifest map_labels(const data::Manifest& manifest, Protocol protocol,
                          const std::optional<std::vector<std::string>>& classes = std::nullopt);

struct Split {
  std::string test_subject;
  std::vector<std::string> train_subjects;
};

// One fold per distinct subject, in first-seen order.
std::vector<Split> loso_splits(const data::Manifest& manifest);

// "DATASET/subject": subjects are only unique within a dataset.
std::string subject_key(data::DatasetId dataset, const std::string& subject);

struct FoldPlan {
  std::string test_subject;  // subject key
  std::vector<std::size_t> train;     // indices into the evaluation manifest
  std::vector<std::size_t> test;
  std::vector<std::size_t> pretrain;  // indices into the pre-training pool (per-fold mode only)
};

struct ProtocolConfig {
  Protocol protocol = Protocol::SDE_SYNTH;
  nn::ModelConfig model;  // num_classes is set from the protocol's class list
  train::TrainConfig pretrain;
  train::TrainConfig finetune;
  train::Ablation ablation;  // applied to both phases
  // Pre-train once per fold on data without the held-out subject, instead of
  // once for all folds.
  bool exclude_test_subjects_from_pretrain = false;
  // Shared pre-trained checkpoint; skips pre-training. Not allowed together
  // with the exclusion flag.
  std::optional<std::filesystem::path> pretrained_checkpoint;
  std::optional<std::vector<std::string>> classes;
  int jobs = 1;  // folds evaluated concurrently

  void validate() const;
  nlohmann::json to_json() const;
};

struct ProtocolData {
  std::vector<data::Manifest> micro;  // one per dataset
  std::vector<data::Manifest> macro;  // pre-training only
};

// Evaluation manifest of a protocol: labels mapped, datasets concatenated,
// subject ids replaced by subject keys. Throws MissingDatasetError.
struct EvaluationSet {
  data::Manifest manifest;
  std::map<std::string, std::map<std::string, int>> excluded;  // dataset -> label -> count
};
EvaluationSet evaluation_set(const ProtocolConfig& cfg, const ProtocolData& data);

// Every micro and (unless ablated) macro sample usable for pre-training, with
// subject keys.
data::Manifest pretrain_pool(const ProtocolConfig& cfg, const ProtocolData& data);

// LOSO folds over the evaluation set. Pre-training indices are filled only in
// per-fold mode. Throws if any subject would appear on both sides.
std::vector<FoldPlan> plan_folds(const ProtocolConfig& cfg, const data::Manifest& eval_set,
                                 const data::Manifest& pool);

struct Scores {
  double uf1 = 0, uar = 0, acc = 0;
  long n = 0;
  int effective_classes = 0;
  std::vector<std::string> warnings;
};
Scores score(const ConfusionMatrix& cm);

struct FoldResult {
  std::string test_subject;
  std::vector<std::string> clip_ids;
  std::vector<int> truth, predicted;
  ConfusionMatrix cm;
  std::size_t n_train = 0;
  std::size_t n_pretrain = 0;  // per-fold mode
  std::vector<train::EpochRecord> pretrain_history;
  std::vector<train::EpochRecord> finetune_history;
};

struct DatasetScores {
  std::string dataset;
  ConfusionMatrix cm;
  Scores scores;
};

struct Report {
  Protocol protocol = Protocol::SDE_SYNTH;
  std::vector<std::string> classes;
  std::vector<FoldResult> folds;
  ConfusionMatrix aggregate;  // sum of the fold matrices
  Scores overall;
  std::vector<DatasetScores> per_dataset;  // CDE only
  std::map<std::string, std::map<std::string, int>> excluded;
  std::vector<train::EpochRecord> shared_pretrain_history;
  bool exclude_test_subjects_from_pretrain = false;
  std::string config_hash;
  nlohmann::json config;
};

// Full LOSO run. Throws MissingDatasetError when a dataset of the protocol
// has no manifest.
Report run_protocol(const ProtocolConfig& cfg, const ProtocolData& data, const std::string& config_hash = {});

// Reassembles aggregate and per-dataset scores from fold results.
void aggregate(Report& report, const data::Manifest& eval_set);

nlohmann::json to_json(const Report& report);
// summary CSV: protocol,dataset,uf1,uar,acc,n_samples
void write_summary_csv(const Report& report, const std::filesystem::path& path);
// report.json, summary.csv, confusion.svg and folds.svg inside dir.
void write_report(const Report& report, const std::filesystem::path& dir);

std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title);
std::string fold_bars_svg(const std::vector<FoldResult>& folds, const std::string& title);

// Hex FNV-1a of the compact JSON dump.
std::string config_hash(const nlohmann::json& config);

}  // namespace moext::eval
