#pragma once

// Helpers shared by the test binaries.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>

#include <spdlog/spdlog.h>
#include <unistd.h>

#include "moext/preprocess.hpp"
#include "moext/rng.hpp"
#include "moext/synth.hpp"
#include "moext/tensor.hpp"

namespace testing {

template <typename T>
moext::Tensor<T> random_tensor(const moext::Shape& s, moext::Rng& rng, double lo = -1.0, double hi = 1.0) {
  moext::Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("moext_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Synthetic set, aligned from detected landmarks (or the generator's ground
// truth when asked).
struct PreparedData {
  moext::data::Manifest micro, macro;
};

inline PreparedData prepare_synthetic(const moext::synth::SynthConfig& cfg, const std::filesystem::path& dir,
                                      bool ground_truth = false) {
  const auto raw = moext::synth::generate_synthetic_dataset(cfg, dir / "raw");
  moext::data::PreprocessOptions opt;
  if (ground_truth) opt.landmarks = moext::data::load_landmarks(dir / "raw" / "landmarks.json");
  PreparedData out;
  out.micro = moext::data::preprocess_manifest(raw.micro, dir / "aligned" / "micro", opt).manifest;
  moext::data::write_manifest(out.micro, dir / "aligned" / "micro.csv");
  if (!raw.macro.samples.empty()) {
    out.macro = moext::data::preprocess_manifest(raw.macro, dir / "aligned" / "macro", opt).manifest;
    moext::data::write_manifest(out.macro, dir / "aligned" / "macro.csv");
  }
  return out;
}

inline void quiet() { spdlog::set_level(spdlog::level::warn); }

}  // namespace testing
