#include "moext/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numbers>
#include <sstream>

#include <opencv2/video/tracking.hpp>

#include "moext/errors.hpp"

namespace moext::flow {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  return kTwoPi - a < 1e-12 ? 0.0 : a;
}

// 0..255 luminance as float, so no quantisation happens before the flow.
cv::Mat gray(const ImageTensor& img) {
  if (img.n() != 1 || img.c() != 3) throw ShapeError("flow expects a single 3-channel frame");
  cv::Mat out(img.h(), img.w(), CV_32F);
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      out.at<float>(y, x) =
          255.0f * (0.299f * img.at(0, 0, y, x) + 0.587f * img.at(0, 1, y, x) + 0.114f * img.at(0, 2, y, x));
  return out;
}

bool constant(const cv::Mat& m) {
  double lo, hi;
  cv::minMaxLoc(m, &lo, &hi);
  return lo == hi;
}

}  // namespace

float FlowField::magnitude(std::size_t i) const { return std::hypot(u[i], v[i]); }

float FlowField::angle(std::size_t i) const {
  return static_cast<float>(wrap(std::atan2(static_cast<double>(v[i]), static_cast<double>(u[i]))));
}

double FlowField::mean_u() const {
  double s = 0;
  for (float x : u) s += x;
  return u.empty() ? 0.0 : s / u.size();
}

double FlowField::mean_v() const {
  double s = 0;
  for (float x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double FlowField::mean_magnitude() const {
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += magnitude(i);
  return u.empty() ? 0.0 : s / u.size();
}

FlowField dense_flow(const ImageTensor& a, const ImageTensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("flow frames differ in shape");
  const cv::Mat ga = gray(a), gb = gray(b);
  FlowField f;
  f.width = a.w();
  f.height = a.h();
  const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
  f.u.assign(n, 0.0f);
  f.v.assign(n, 0.0f);
  // The solver leaves a small residue near the border even without motion.
  if (constant(ga) && constant(gb)) return f;
  if (cv::countNonZero(ga != gb) == 0) return f;
  cv::Mat flow;
  cv::calcOpticalFlowFarneback(ga, gb, flow, 0.5, kPyramidLevels, kWindow, 3, 5, 1.2, 0);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const auto d = flow.at<cv::Vec2f>(y, x);
      const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
      f.u[i] = std::isfinite(d[0]) ? d[0] : 0.0f;
      f.v[i] = std::isfinite(d[1]) ? d[1] : 0.0f;
    }
  return f;
}

double circular_mean(const std::vector<double>& angles, const std::vector<double>& weights) {
  if (!weights.empty() && weights.size() != angles.size()) throw ShapeError("one weight per angle");
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sx += w * std::cos(angles[i]);
    sy += w * std::sin(angles[i]);
  }
  if (std::hypot(sx, sy) < 1e-12) return 0.0;
  return wrap(std::atan2(sy, sx));
}

std::vector<FrameStat> flow_stats(const std::vector<ImageTensor>& frames, int reference_idx, int jobs) {
  if (frames.size() < 2) throw ConfigError("flow statistics need at least 2 frames");
  if (reference_idx < 0 || reference_idx >= static_cast<int>(frames.size()))
    throw ConfigError("reference frame out of range");
  std::vector<int> targets;
  for (int k = 0; k < static_cast<int>(frames.size()); ++k)
    if (k != reference_idx) targets.push_back(k);

  auto one = [&](int k) {
    const FlowField f = dense_flow(frames[reference_idx], frames[k]);
    FrameStat s;
    s.frame_idx = k;
    s.mean_magnitude = f.mean_magnitude();
    // The magnitude-weighted mean of unit vectors is the direction of the summed flow.
    double su = 0, sv = 0;
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      su += f.u[i];
      sv += f.v[i];
    }
    s.mean_angle_rad = std::hypot(su, sv) < 1e-9 ? 0.0 : wrap(std::atan2(sv, su));
    return s;
  };

  std::vector<FrameStat> out(targets.size());
  const std::size_t step = static_cast<std::size_t>(std::max(1, jobs));
  if (step == 1) {
    for (std::size_t i = 0; i < targets.size(); ++i) out[i] = one(targets[i]);
    return out;
  }
  for (std::size_t b = 0; b < targets.size(); b += step) {
    const std::size_t e = std::min(targets.size(), b + step);
    std::vector<std::future<FrameStat>> running;
    for (std::size_t i = b; i < e; ++i) running.push_back(std::async(std::launch::async, one, targets[i]));
    for (std::size_t i = b; i < e; ++i) out[i] = running[i - b].get();
  }
  return out;
}

void write_flow_csv(const std::vector<FrameStat>& stats, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "frame_idx,mean_magnitude,mean_angle_rad\n";
  for (const auto& s : stats) out << s.frame_idx << ',' << s.mean_magnitude << ',' << s.mean_angle_rad << '\n';
}

std::string flow_plot_svg(const std::vector<FrameStat>& stats, const std::string& title) {
  const int left = 60, top = 40, pw = 420, ph = 220, w = left + pw + 60, h = top + ph + 60;
  double max_mag = 1e-9;
  int max_idx = 1;
  for (const auto& s : stats) {
    max_mag = std::max(max_mag, s.mean_magnitude);
    max_idx = std::max(max_idx, s.frame_idx);
  }
  auto px = [&](int idx) { return left + pw * idx / max_idx; };
  auto py_mag = [&](double m) { return top + ph - static_cast<int>(ph * m / max_mag); };
  auto py_ang = [&](double a) { return top + ph - static_cast<int>(ph * a / kTwoPi); };
  char buf[64];
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#888\"/>\n";
  std::snprintf(buf, sizeof buf, "%.3g", max_mag);
  s << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
  s << "<text x=\"" << left - 6 << "\" y=\"" << top + ph << "\" text-anchor=\"end\">0</text>\n";
  s << "<text x=\"" << left + pw + 6 << "\" y=\"" << top + 4 << "\">2pi</text>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">frame index</text>\n";
  s << "<text x=\"" << left << "\" y=\"" << h - 30 << "\" fill=\"#2b6cb0\">mean magnitude (px)</text>\n";
  s << "<text x=\"" << left + pw << "\" y=\"" << h - 30 << "\" fill=\"#c05621\" text-anchor=\"end\">mean angle (rad)</text>\n";
  s << "<polyline fill=\"none\" stroke=\"#2b6cb0\" stroke-width=\"2\" points=\"";
  for (const auto& st : stats) s << px(st.frame_idx) << ',' << py_mag(st.mean_magnitude) << ' ';
  s << "\"/>\n";
  for (const auto& st : stats)
    s << "<circle cx=\"" << px(st.frame_idx) << "\" cy=\"" << py_ang(st.mean_angle_rad)
      << "\" r=\"3\" fill=\"#c05621\"/>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace moext::flow
