#include "moext/preprocess.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "moext/errors.hpp"
#include "moext/image.hpp"

namespace fs = std::filesystem;

namespace moext::data {

std::map<std::string, face::Points> load_landmarks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmarks file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("landmarks file " + path.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(path).parent_path();
  std::map<std::string, face::Points> out;
  for (const auto& [key, arr] : j.items()) {
    if (!arr.is_array() || arr.size() != 5) throw SchemaError("landmarks for " + key + " must list 5 points");
    face::Points p;
    for (std::size_t i = 0; i < 5; ++i) p[i] = {arr[i].at(0).get<double>(), arr[i].at(1).get<double>()};
    out[(base / key).lexically_normal().string()] = p;
  }
  return out;
}

PreprocessResult preprocess_manifest(const Manifest& manifest, const fs::path& out_dir,
                                     const PreprocessOptions& options) {
  PreprocessResult res;
  res.manifest.dataset = manifest.dataset;
  res.manifest.label_schema = manifest.label_schema;
  for (const auto& s : manifest.samples) {
    const fs::path onset_path = s.frame_paths.at(s.onset_idx);
    face::Similarity to_crop;
    try {
      face::Points pts;
      if (options.landmarks) {
        auto it = options.landmarks->find(fs::absolute(onset_path).lexically_normal().string());
        if (it == options.landmarks->end()) throw DetectionError("no landmarks listed for " + onset_path.string());
        pts = it->second;
      } else {
        pts = face::detect_landmarks(read_image(onset_path));
      }
      to_crop = face::alignment_transform(pts, options.size);
    } catch (const DetectionError& e) {
      spdlog::warn("skipping {}/{}: {}", s.subject_id, s.clip_id, e.what());
      res.skipped.push_back({s.subject_id, s.clip_id, e.what()});
      continue;
    }
    Sample o = s;
    o.frames_dir = fs::absolute(out_dir / s.subject_id / s.clip_id).lexically_normal();
    o.frame_paths.clear();
    for (int k = s.onset_idx; k <= s.offset_idx; ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "%04d.png", k - s.onset_idx);
      const fs::path dst = o.frames_dir / name;
      save_image(face::warp_to_crop(read_image(s.frame_paths[k]), to_crop, options.size), dst);
      o.frame_paths.push_back(dst);
    }
    o.onset_idx = 0;
    o.offset_idx = s.offset_idx - s.onset_idx;
    o.apex_idx = resolve_apex(s) - s.onset_idx;
    res.manifest.samples.push_back(std::move(o));
  }
  if (!res.skipped.empty())
    spdlog::warn("{} of {} samples skipped after failed landmark detection", res.skipped.size(),
                 manifest.samples.size());
  return res;
}

}  // namespace moext::data
