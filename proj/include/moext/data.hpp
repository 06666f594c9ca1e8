#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace moext::data {

enum class DatasetId { CASME2, SAMM, SMIC_HS, CASME3_A, SYNTH };

std::string to_string(DatasetId id);
DatasetId parse_dataset_id(std::string_view text);
// Emotion classes as labelled in each dataset (lower case).
std::vector<std::string> native_label_schema(DatasetId id);

// One expression clip.
struct Sample {
  std::string subject_id;
  std::string clip_id;
  std::filesystem::path frames_dir;
  std::vector<std::filesystem::path> frame_paths;  // sorted lexicographically
  int onset_idx = 0;
  std::optional<int> apex_idx;
  int offset_idx = 0;
  std::string label;
  bool is_macro = false;
  DatasetId dataset = DatasetId::SYNTH;

  bool operator==(const Sample&) const = default;
};

struct Manifest {
  DatasetId dataset = DatasetId::SYNTH;
  std::vector<Sample> samples;
  std::vector<std::string> label_schema;

  int label_index(const std::string& label) const;  // -1 when absent
  std::vector<std::string> subjects() const;         // distinct, in first-seen order
  bool operator==(const Manifest&) const = default;
};

inline constexpr int kDefaultPseudoApexFrame = 5;

inline constexpr std::string_view kManifestHeader =
    "dataset_id,subject_id,clip_id,frames_dir,onset_idx,apex_idx,offset_idx,label,is_macro";

// Macro clips: the n-th frame after onset (capped at offset) stands in for the
// apex. Micro clips: the labelled apex, else the floor midpoint of onset and offset.
int resolve_apex(const Sample& sample, int macro_pseudo_apex_n = kDefaultPseudoApexFrame);

// Image files of a directory, sorted lexicographically.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

// Parses a manifest CSV. frames_dir entries are resolved relative to the
// manifest's directory. Without an explicit schema the dataset's native
// schema is used (for SYNTH: the sorted distinct labels).
Manifest load_manifest(const std::filesystem::path& path, DatasetId dataset,
                       const std::optional<std::vector<std::string>>& schema = std::nullopt);
// Same, taking the dataset id from the first row.
Manifest load_manifest(const std::filesystem::path& path);

// Writes the CSV; frames_dir is stored relative to the manifest's directory.
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Checks the Manifest invariants; throws SchemaError.
void validate_manifest(const Manifest& manifest);

std::string normalize_label(std::string_view label);

}  // namespace moext::data
