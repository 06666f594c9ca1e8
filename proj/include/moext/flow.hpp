#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "moext/image.hpp"

namespace moext::flow {

// Per-pixel displacement from frame a to frame b, row-major.
struct FlowField {
  int width = 0, height = 0;
  std::vector<float> u, v;

  float magnitude(std::size_t i) const;
  float angle(std::size_t i) const;  // [0, 2pi), image axes (y down)
  double mean_u() const;
  double mean_v() const;
  double mean_magnitude() const;
};

inline constexpr int kPyramidLevels = 3;
inline constexpr int kWindow = 15;

// Polynomial-expansion dense flow on the grayscale frames. Constant frames
// give a zero field.
FlowField dense_flow(const ImageTensor& a, const ImageTensor& b);

// Angle of the summed unit (or weighted) vectors, in [0, 2pi). Zero when the
// vectors cancel.
double circular_mean(const std::vector<double>& angles, const std::vector<double>& weights = {});

struct FrameStat {
  int frame_idx = 0;
  double mean_magnitude = 0;
  double mean_angle_rad = 0;  // magnitude-weighted circular mean
};

// Flow from the reference frame to each other frame; size() - 1 rows.
std::vector<FrameStat> flow_stats(const std::vector<ImageTensor>& frames, int reference_idx = 0, int jobs = 1);

void write_flow_csv(const std::vector<FrameStat>& stats, const std::filesystem::path& path);
std::string flow_plot_svg(const std::vector<FrameStat>& stats, const std::string& title);

}  // namespace moext::flow
