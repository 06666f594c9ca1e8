#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "moext/data.hpp"
#include "moext/face.hpp"

namespace moext::synth {

// Face layout in the 224 canonical frame. Defaults are the neutral face that
// the alignment template is built from.
struct FaceGeometry {
  double cx = 112.0, cy = 112.0;
  double head_rx = 78.0, head_ry = 100.0;
  double eye_dx = 33.6, eye_y = 89.6, eye_rx = 14.0, eye_ry = 7.0;
  double brow_dx = 33.6, brow_y = 68.0, brow_rx = 18.0, brow_ry = 4.5;
  double mouth_y = 160.0, mouth_hw = 26.0;
};

// Expression deformation, each entry in units of the amplitude (pixels in
// the canonical frame).
struct Expression {
  double brow_raise = 0;
  double brow_furrow = 0;
  double mouth_lift = 0;
  double mouth_open = 0;
  double mouth_stretch = 0;
  double squint = 0;
};

inline constexpr int kMaxClasses = 7;
Expression class_expression(int cls);

struct Look {
  cv::Scalar skin, background, feature, lips, shade;
  std::vector<cv::Point2d> freckles;  // canonical frame
};

struct Subject {
  FaceGeometry geometry;
  Look look;
};

Subject make_subject(std::uint64_t seed);

// Canonical-to-raw placement of the face.
using Pose = face::Similarity;

// Renders one frame, BGR 8-bit, size x size.
cv::Mat render(const Subject& subject, const Expression& expr, double amplitude, const Pose& pose,
               int size);

// Position of a 68-scheme point (8, 9, 10, 20, 25, 40 or 43) in the
// canonical frame for the given expression.
cv::Point2d landmark(const FaceGeometry& g, const Expression& expr, double amplitude, int number);
face::Points landmarks(const FaceGeometry& g, const Expression& expr, double amplitude, const Pose& pose);

// Pose that puts the canonical neutral face at the centre of a size x size frame.
Pose centred_pose(int size, double scale = 1.0, double angle_deg = 0.0, cv::Point2d shift = {0, 0});

struct SynthConfig {
  int n_subjects = 6;
  int clips_per_subject = 6;
  int n_classes = 3;
  int macro_clips_per_subject = 0;
  std::uint64_t seed = 0;
  int raw_size = 256;
  double amplitude = 8.0;        // micro apex deformation
  double macro_amplitude = 16.0;  // reached at the last macro frame
  int macro_frames = 9;
  double amplitude_jitter = 0.15;
  double max_rotation_deg = 6.0;
  double max_shift = 8.0;
  // Per-class override of `amplitude`.
  std::optional<std::vector<double>> class_amplitudes;

  void validate() const;
};

struct SynthResult {
  data::Manifest micro;
  data::Manifest macro;  // empty unless macro clips were requested
  std::map<std::string, face::Points> landmarks;  // keyed by path relative to out_dir
};

// Writes frames/<subject>/<clip>/NNN.png, manifest.csv (micro clips),
// macro_manifest.csv (if any) and landmarks.json under out_dir.
SynthResult generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

std::string class_name(int cls);

}  // namespace moext::synth
