#include "moext/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "moext/errors.hpp"
#include "moext/image.hpp"
#include "moext/rng.hpp"

namespace fs = std::filesystem;

namespace moext::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kShift = 4;  // sub-pixel bits for OpenCV drawing
constexpr double kOne = 1 << kShift;

cv::Point fixed(cv::Point2d p) { return {cvRound(p.x * kOne), cvRound(p.y * kOne)}; }

struct Canvas {
  cv::Mat img;
  Pose pose;

  void ellipse(cv::Point2d c, double rx, double ry, double angle_deg, const cv::Scalar& color) {
    const double s = pose.scale();
    cv::ellipse(img, fixed(pose.apply(c)), cv::Size(cvRound(rx * s * kOne), cvRound(ry * s * kOne)),
                angle_deg + pose.angle() / kDeg, 0, 360, color, cv::FILLED, cv::LINE_AA, kShift);
  }
  void polyline(const std::vector<cv::Point2d>& pts, double thickness, const cv::Scalar& color) {
    std::vector<cv::Point> q;
    for (const auto& p : pts) q.push_back(fixed(pose.apply(p)));
    cv::polylines(img, q, false, color, std::max(1, cvRound(thickness * pose.scale())), cv::LINE_AA,
                  kShift);
  }
  void circle(cv::Point2d c, double r, const cv::Scalar& color) {
    cv::circle(img, fixed(pose.apply(c)), cvRound(r * pose.scale() * kOne), color, cv::FILLED,
               cv::LINE_AA, kShift);
  }
};

cv::Point2d brow_centre(const FaceGeometry& g, const Expression& e, double a, int side) {
  return {g.cx + side * g.brow_dx, g.brow_y - e.brow_raise * a + 0.3 * e.brow_furrow * a};
}

}  // namespace

Expression class_expression(int cls) {
  switch (cls) {
    case 0: return {.mouth_lift = 1.0, .mouth_stretch = 0.5};
    case 1: return {.brow_raise = 1.0, .mouth_open = 0.8};
    case 2: return {.brow_furrow = 1.0, .mouth_lift = -0.8};
    case 3: return {.mouth_stretch = 1.0, .squint = 0.6};
    case 4: return {.brow_raise = 1.0, .mouth_lift = -1.0};
    case 5: return {.brow_furrow = 0.6, .mouth_open = 1.0};
    case 6: return {.brow_furrow = 0.5, .mouth_lift = 1.0};
    default: throw ConfigError("synthetic generator supports at most 7 classes");
  }
}

std::string class_name(int cls) { return "class" + std::to_string(cls); }

Subject make_subject(std::uint64_t seed) {
  Rng rng(seed);
  Subject s;
  auto& g = s.geometry;
  g.head_rx *= rng.uniform(0.94, 1.06);
  g.head_ry *= rng.uniform(0.95, 1.05);
  g.eye_dx *= rng.uniform(0.92, 1.08);
  g.brow_dx = g.eye_dx;
  g.eye_y += rng.uniform(-3, 3);
  g.eye_rx *= rng.uniform(0.9, 1.1);
  g.eye_ry *= rng.uniform(0.85, 1.15);
  g.brow_y = g.eye_y - 21.6 + rng.uniform(-2, 2);
  g.brow_rx *= rng.uniform(0.9, 1.1);
  g.mouth_y += rng.uniform(-4, 4);
  g.mouth_hw += rng.uniform(-3, 3);

  auto& l = s.look;
  const double t = rng.uniform(0.0, 1.0);
  l.skin = cv::Scalar(110 + 100 * t, 140 + 90 * t, 185 + 65 * t);
  const double u = rng.uniform(0.0, 1.0);
  l.background = cv::Scalar(70 + 60 * u, 80 + 40 * u, 60 + 30 * rng.uniform());
  l.feature = cv::Scalar(rng.uniform(20, 45), rng.uniform(20, 40), rng.uniform(25, 50));
  l.lips = cv::Scalar(rng.uniform(50, 70), rng.uniform(40, 60), rng.uniform(120, 150));
  l.shade = l.skin * 0.8;
  const int n_freckles = 8 + static_cast<int>(rng.below(18));
  for (int i = 0; i < n_freckles; ++i) {
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    l.freckles.emplace_back(g.cx + side * rng.uniform(20, 50), g.eye_y + rng.uniform(15, 45));
  }
  return s;
}

cv::Point2d landmark(const FaceGeometry& g, const Expression& e, double a, int number) {
  const double phi = 20.0 * kDeg;
  switch (number) {
    case 8: return {g.cx - g.head_rx * std::sin(phi), g.cy + g.head_ry * std::cos(phi)};
    case 9: return {g.cx, g.cy + g.head_ry};
    case 10: return {g.cx + g.head_rx * std::sin(phi), g.cy + g.head_ry * std::cos(phi)};
    case 20: return brow_centre(g, e, a, -1);
    case 25: return brow_centre(g, e, a, +1);
    case 40: return {g.cx - g.eye_dx + g.eye_rx, g.eye_y};
    case 43: return {g.cx + g.eye_dx - g.eye_rx, g.eye_y};
    default: throw ConfigError("no synthetic ground truth for landmark " + std::to_string(number));
  }
}

face::Points landmarks(const FaceGeometry& g, const Expression& e, double a, const Pose& pose) {
  face::Points p;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = pose.apply(landmark(g, e, a, face::kLandmarkNumbers[i]));
  return p;
}

Pose centred_pose(int size, double scale, double angle_deg, cv::Point2d shift) {
  // Rotate and scale about the canonical centre (112, 112), then move it to the frame centre.
  const Pose r = Pose::from(scale, angle_deg * kDeg, {0, 0});
  const cv::Point2d c = r.apply({112.0, 112.0});
  const double mid = (size - 1) / 2.0 + 0.5;
  return {r.a, r.b, mid - c.x + shift.x, mid - c.y + shift.y};
}

cv::Mat render(const Subject& subject, const Expression& e, double a, const Pose& pose, int size) {
  const auto& g = subject.geometry;
  const auto& l = subject.look;
  Canvas cv_{cv::Mat(size, size, CV_8UC3, l.background), pose};

  cv_.ellipse({g.cx, g.cy}, g.head_rx, g.head_ry, 0, l.skin);
  for (const auto& f : l.freckles) cv_.circle(f, 1.6, l.shade);
  // nose
  cv_.polyline({{g.cx, g.eye_y + 8}, {g.cx - 5, g.mouth_y - 24}, {g.cx + 4, g.mouth_y - 22}}, 2.0, l.shade);

  for (int side : {-1, +1}) {
    cv_.ellipse(brow_centre(g, e, a, side), g.brow_rx, g.brow_ry, -side * e.brow_furrow * a * 0.8, l.feature);
    const double ry = std::max(1.5, g.eye_ry - 0.5 * e.squint * a);
    cv_.ellipse({g.cx + side * g.eye_dx, g.eye_y}, g.eye_rx, ry, 0, l.feature);
  }

  const double open = e.mouth_open * a;
  if (open > 0.5) cv_.ellipse({g.cx, g.mouth_y + 0.5 * open}, 0.45 * g.mouth_hw, 0.6 * open, 0, l.lips);
  const double hw = g.mouth_hw + 0.6 * e.mouth_stretch * a;
  const cv::Point2d p0(g.cx - hw, g.mouth_y - e.mouth_lift * a);
  const cv::Point2d p2(g.cx + hw, g.mouth_y - e.mouth_lift * a);
  const cv::Point2d p1(g.cx, g.mouth_y + 0.6 * e.mouth_lift * a);
  std::vector<cv::Point2d> curve;
  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    curve.push_back((1 - t) * (1 - t) * p0 + 2 * (1 - t) * t * p1 + t * t * p2);
  }
  cv_.polyline(curve, 3.0, l.lips);
  return cv_.img;
}

void SynthConfig::validate() const {
  if (n_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (n_classes > kMaxClasses) throw ConfigError("synthetic dataset supports at most 7 classes");
  if (n_subjects < 1 || clips_per_subject < 1) throw ConfigError("need at least one subject and clip");
  if (macro_clips_per_subject < 0) throw ConfigError("negative macro clip count");
  if (raw_size < 64) throw ConfigError("raw frame size must be >= 64");
  if (macro_frames < 2) throw ConfigError("macro clips need at least 2 frames");
  if (class_amplitudes && static_cast<int>(class_amplitudes->size()) != n_classes)
    throw ConfigError("class_amplitudes must list one value per class");
}

namespace {

std::string two_digit(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

std::string frame_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d.png", k);
  return buf;
}

}  // namespace

SynthResult generate_synthetic_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  SynthResult res;
  res.micro.dataset = res.macro.dataset = data::DatasetId::SYNTH;
  for (int k = 0; k < cfg.n_classes; ++k) res.micro.label_schema.push_back(class_name(k));
  res.macro.label_schema = res.micro.label_schema;
  fs::create_directories(out_dir);

  auto emit_clip = [&](data::Manifest& manifest, const Subject& subject, const std::string& sid,
                       const std::string& cid, int label, const std::vector<double>& amps, Rng& rng,
                       bool macro) {
    const Pose pose = centred_pose(cfg.raw_size, rng.uniform(0.94, 1.06),
                                   rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg),
                                   {rng.uniform(-cfg.max_shift, cfg.max_shift),
                                    rng.uniform(-cfg.max_shift, cfg.max_shift)});
    const Expression e = class_expression(label);
    const fs::path rel_dir = fs::path("frames") / sid / cid;
    data::Sample s;
    s.subject_id = sid;
    s.clip_id = cid;
    s.frames_dir = fs::absolute(out_dir / rel_dir).lexically_normal();
    for (std::size_t k = 0; k < amps.size(); ++k) {
      const fs::path rel = rel_dir / frame_name(static_cast<int>(k));
      write_image(render(subject, e, amps[k], pose, cfg.raw_size), out_dir / rel);
      res.landmarks[rel.generic_string()] = landmarks(subject.geometry, e, amps[k], pose);
      s.frame_paths.push_back(s.frames_dir / frame_name(static_cast<int>(k)));
    }
    s.onset_idx = 0;
    s.offset_idx = static_cast<int>(amps.size()) - 1;
    s.is_macro = macro;
    s.apex_idx = macro ? data::resolve_apex(s) : s.offset_idx;
    s.label = class_name(label);
    s.dataset = data::DatasetId::SYNTH;
    manifest.samples.push_back(std::move(s));
  };

  for (int si = 0; si < cfg.n_subjects; ++si) {
    const std::uint64_t subject_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(si));
    const Subject subject = make_subject(subject_seed);
    const std::string sid = two_digit("s", si + 1);
    for (int ci = 0; ci < cfg.clips_per_subject; ++ci) {
      Rng rng(derive_seed(subject_seed, static_cast<std::uint64_t>(ci) + 1));
      const int label = (si * cfg.clips_per_subject + ci) % cfg.n_classes;
      const double base = cfg.class_amplitudes ? (*cfg.class_amplitudes)[label] : cfg.amplitude;
      const double amp = base * (1.0 + cfg.amplitude_jitter * rng.uniform(-1, 1));
      emit_clip(res.micro, subject, sid, two_digit("c", ci), label, {0.0, amp}, rng, false);
    }
    for (int mi = 0; mi < cfg.macro_clips_per_subject; ++mi) {
      Rng rng(derive_seed(subject_seed, 1000 + static_cast<std::uint64_t>(mi)));
      const int label = (si + mi) % cfg.n_classes;
      const double peak = cfg.macro_amplitude * (1.0 + cfg.amplitude_jitter * rng.uniform(-1, 1));
      std::vector<double> amps;
      for (int k = 0; k < cfg.macro_frames; ++k) amps.push_back(peak * k / (cfg.macro_frames - 1));
      emit_clip(res.macro, subject, sid, two_digit("m", mi), label, amps, rng, true);
    }
  }

  data::write_manifest(res.micro, out_dir / "manifest.csv");
  if (!res.macro.samples.empty()) data::write_manifest(res.macro, out_dir / "macro_manifest.csv");

  nlohmann::json lm = nlohmann::json::object();
  for (const auto& [path, pts] : res.landmarks) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pts) arr.push_back({p.x, p.y});
    lm[path] = arr;
  }
  std::ofstream(out_dir / "landmarks.json") << lm.dump(1) << '\n';
  return res;
}

}  // namespace moext::synth
