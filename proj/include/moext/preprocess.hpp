#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moext/data.hpp"
#include "moext/face.hpp"

namespace moext::data {

struct SkippedSample {
  std::string subject_id;
  std::string clip_id;
  std::string reason;
};

struct PreprocessResult {
  Manifest manifest;  // aligned crops, indices relative to the written frames
  std::vector<SkippedSample> skipped;
};

struct PreprocessOptions {
  int size = 224;
  // When given, landmarks are looked up here (keyed by absolute frame path)
  // instead of being detected.
  std::optional<std::map<std::string, face::Points>> landmarks;
};

// Aligns every frame in [onset, offset] of each sample with the similarity
// fitted to its onset frame's landmarks and writes the crops under
// out_dir/<subject>/<clip>/. Samples whose detection fails are listed in
// `skipped` and logged.
PreprocessResult preprocess_manifest(const Manifest& manifest, const std::filesystem::path& out_dir,
                                     const PreprocessOptions& options = {});

// Reads a landmarks.json written by the synthetic generator; keys are made
// absolute against the file's directory.
std::map<std::string, face::Points> load_landmarks(const std::filesystem::path& path);

}  // namespace moext::data
