#include <doctest.h>

#include <opencv2/core.hpp>

#include "moext/errors.hpp"
#include "moext/image.hpp"
#include "moext/preprocess.hpp"
#include "moext/synth.hpp"
#include "support.hpp"

using namespace moext;
using namespace moext::data;
namespace fs = std::filesystem;

namespace {

synth::SynthConfig cfg3() {
  synth::SynthConfig cfg;
  cfg.n_subjects = 2;
  cfg.clips_per_subject = 3;
  cfg.macro_clips_per_subject = 1;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("aligned crops: shape, range and manifest indices") {
  testing::quiet();
  testing::TempDir dir("prep");
  const auto raw = synth::generate_synthetic_dataset(cfg3(), dir / "raw");
  const auto res = preprocess_manifest(raw.macro, dir / "out");
  CHECK(res.skipped.empty());
  REQUIRE(res.manifest.samples.size() == raw.macro.samples.size());
  for (std::size_t i = 0; i < res.manifest.samples.size(); ++i) {
    const auto& in = raw.macro.samples[i];
    const auto& s = res.manifest.samples[i];
    CHECK(s.onset_idx == 0);
    CHECK(s.offset_idx == in.offset_idx - in.onset_idx);
    CHECK(s.apex_idx == resolve_apex(in) - in.onset_idx);
    CHECK(static_cast<int>(s.frame_paths.size()) == s.offset_idx + 1);
    for (const auto& p : s.frame_paths) CHECK(is_valid_image(load_image(p)));
  }
  write_manifest(res.manifest, dir / "out.csv");
  // macro clips cover only some classes, so pass the schema explicitly
  CHECK(load_manifest(dir / "out.csv", DatasetId::SYNTH, res.manifest.label_schema) == res.manifest);
}

TEST_CASE("detected and ground-truth landmarks give nearly the same crop") {
  testing::quiet();
  testing::TempDir dir("prep_gt");
  const auto raw = synth::generate_synthetic_dataset(cfg3(), dir / "raw");
  PreprocessOptions gt;
  gt.landmarks = load_landmarks(dir / "raw" / "landmarks.json");
  CHECK(gt.landmarks->size() == raw.landmarks.size());
  const auto a = preprocess_manifest(raw.micro, dir / "det");
  const auto b = preprocess_manifest(raw.micro, dir / "gt", gt);
  REQUIRE(a.manifest.samples.size() == b.manifest.samples.size());
  for (std::size_t i = 0; i < a.manifest.samples.size(); ++i) {
    const auto x = load_image(a.manifest.samples[i].frame_paths[0]);
    const auto y = load_image(b.manifest.samples[i].frame_paths[0]);
    double mad = 0;
    for (std::size_t k = 0; k < x.size(); ++k) mad += std::abs(x.data()[k] - y.data()[k]);
    CHECK(mad / static_cast<double>(x.size()) < 0.03);
  }
}

TEST_CASE("failed detection is skipped and counted") {
  testing::quiet();
  testing::TempDir dir("prep_skip");
  auto raw = synth::generate_synthetic_dataset(cfg3(), dir / "raw").micro;
  Sample blank = raw.samples[0];
  blank.clip_id = "blank";
  blank.frames_dir = dir / "blank";
  blank.frame_paths.clear();
  for (int k = 0; k < 2; ++k) {
    const auto p = dir / "blank" / (std::to_string(k) + ".png");
    write_image(cv::Mat(256, 256, CV_8UC3, cv::Scalar(90, 90, 90)), p);
    blank.frame_paths.push_back(p);
  }
  raw.samples.insert(raw.samples.begin() + 2, blank);
  const auto res = preprocess_manifest(raw, dir / "out");
  REQUIRE(res.skipped.size() == 1);
  CHECK(res.skipped[0].clip_id == "blank");
  CHECK(res.manifest.samples.size() + res.skipped.size() == raw.samples.size());

  PreprocessOptions partial;
  partial.landmarks = std::map<std::string, face::Points>{};
  CHECK(preprocess_manifest(raw, dir / "none", partial).skipped.size() == raw.samples.size());
}
