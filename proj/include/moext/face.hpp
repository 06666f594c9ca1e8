#pragma once

#include <array>

#include <opencv2/core.hpp>

#include "moext/image.hpp"

namespace moext::face {

// The five alignment points, in this order, by their 1-based number in the
// 68-point annotation scheme.
inline constexpr std::array<int, 5> kLandmarkNumbers{8, 9, 25, 40, 43};

using Points = std::array<cv::Point2d, 5>;

// Target positions of the five points in a size x size crop.
Points canonical_template(int size = kImageSize);

// x' = a x - b y + tx,  y' = b x + a y + ty
struct Similarity {
  double a = 1.0;
  double b = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  cv::Point2d apply(cv::Point2d p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  double scale() const;
  double angle() const;  // radians
  Similarity inverse() const;
  cv::Matx23d matrix() const { return {a, -b, tx, b, a, ty}; }
  static Similarity from(double scale, double angle_rad, cv::Point2d translation);
};

// Least-squares similarity taking src onto dst.
Similarity fit_similarity(const Points& src, const Points& dst);

// Transform from raw-image coordinates into the crop.
Similarity alignment_transform(const Points& landmarks, int size = kImageSize);
// Warps with bilinear sampling and replicated borders; output values in [0, 1].
ImageTensor warp_to_crop(const cv::Mat& image, const Similarity& to_crop, int size = kImageSize);
ImageTensor align_and_crop(const cv::Mat& image, const Points& landmarks, int size = kImageSize);

// Locates the five points on a rendered synthetic face (uniform background,
// elliptical head, dark eyes and brows). Throws DetectionError when no face
// is found.
Points detect_landmarks(const cv::Mat& image);

// Reflects points across the vertical centre line of an image of the given
// width. Point identities are not swapped.
cv::Point2d reflect(cv::Point2d p, int width);

}  // namespace moext::face
