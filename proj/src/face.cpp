#include "moext/face.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

namespace moext::face {

namespace {

// Canonical face in the 224 frame; the synthetic generator's neutral face
// uses the same numbers.
constexpr double kCx = 112.0, kCy = 112.0;
constexpr double kHeadRx = 78.0, kHeadRy = 100.0;
constexpr double kEyeDx = 33.6, kEyeY = 89.6, kEyeRx = 14.0;
constexpr double kBrowDx = 33.6, kBrowY = 68.0;
constexpr double kChinSideDeg = 20.0;

}  // namespace

Points canonical_template(int size) {
  const double k = size / 224.0;
  const double phi = kChinSideDeg * std::numbers::pi / 180.0;
  Points p{
      cv::Point2d(kCx - kHeadRx * std::sin(phi), kCy + kHeadRy * std::cos(phi)),  // 8
      cv::Point2d(kCx, kCy + kHeadRy),                                            // 9
      cv::Point2d(kCx + kBrowDx, kBrowY),                                         // 25
      cv::Point2d(kCx - kEyeDx + kEyeRx, kEyeY),                                  // 40
      cv::Point2d(kCx + kEyeDx - kEyeRx, kEyeY),                                  // 43
  };
  for (auto& q : p) q *= k;
  return p;
}

double Similarity::scale() const { return std::hypot(a, b); }
double Similarity::angle() const { return std::atan2(b, a); }

Similarity Similarity::inverse() const {
  const double d = a * a + b * b;
  if (d == 0.0) throw NumericError("singular similarity transform");
  Similarity inv{a / d, -b / d, 0.0, 0.0};
  const cv::Point2d t = inv.apply({tx, ty});
  inv.tx = -t.x;
  inv.ty = -t.y;
  return inv;
}

Similarity Similarity::from(double scale, double angle_rad, cv::Point2d translation) {
  return {scale * std::cos(angle_rad), scale * std::sin(angle_rad), translation.x, translation.y};
}

Similarity fit_similarity(const Points& src, const Points& dst) {
  // Closed form: centre both sets, then a + ib = sum(conj(s) d) / sum(|s|^2).
  cv::Point2d ms(0, 0), md(0, 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms += src[i];
    md += dst[i];
  }
  ms /= static_cast<double>(src.size());
  md /= static_cast<double>(src.size());
  double num_a = 0, num_b = 0, den = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const cv::Point2d s = src[i] - ms, d = dst[i] - md;
    num_a += s.x * d.x + s.y * d.y;
    num_b += s.x * d.y - s.y * d.x;
    den += s.x * s.x + s.y * s.y;
  }
  if (den <= 1e-12) throw DetectionError("degenerate landmark configuration");
  Similarity t{num_a / den, num_b / den, 0.0, 0.0};
  const cv::Point2d r = t.apply(ms);
  t.tx = md.x - r.x;
  t.ty = md.y - r.y;
  return t;
}

Similarity alignment_transform(const Points& landmarks, int size) {
  return fit_similarity(landmarks, canonical_template(size));
}

ImageTensor warp_to_crop(const cv::Mat& image, const Similarity& to_crop, int size) {
  if (image.empty()) throw ShapeError("align: empty image");
  cv::Mat src;
  if (image.depth() == CV_8U)
    image.convertTo(src, CV_32F, 1.0 / 255.0);
  else
    src = image;
  cv::Mat out;
  cv::warpAffine(src, out, cv::Mat(to_crop.matrix()), cv::Size(size, size), cv::INTER_LINEAR,
                 cv::BORDER_REPLICATE);
  ImageTensor t = to_tensor(out);
  for (auto& v : t.vec()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

ImageTensor align_and_crop(const cv::Mat& image, const Points& landmarks, int size) {
  for (const auto& p : landmarks)
    if (!(p.x >= 0 && p.y >= 0 && p.x <= image.cols - 1 && p.y <= image.rows - 1))
      throw DetectionError("landmark (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                           ") outside the image");
  return warp_to_crop(image, alignment_transform(landmarks, size), size);
}

cv::Point2d reflect(cv::Point2d p, int width) { return {width - 1 - p.x, p.y}; }

namespace {

struct Blob {
  double area = 0;
  cv::Point2d centroid;
  cv::Point2d major;  // unit vector
  double semi_major = 0;
  double u = 0, v = 0;  // centroid in head-normalised coordinates
};

// Moments of a region given accumulated sums.
struct Accum {
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  void add(double x, double y) {
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  // Centroid, eigenvalues (l1 >= l2) and the l1 eigenvector of the covariance.
  void shape(cv::Point2d& c, double& l1, double& l2, cv::Point2d& e1) const {
    c = {sx / n, sy / n};
    const double cxx = sxx / n - c.x * c.x, cyy = syy / n - c.y * c.y, cxy = sxy / n - c.x * c.y;
    const double tr = cxx + cyy, det = cxx * cyy - cxy * cxy;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
    l1 = tr / 2 + disc;
    l2 = tr / 2 - disc;
    if (std::abs(cxy) > 1e-12)
      e1 = {l1 - cyy, cxy};
    else
      e1 = cxx >= cyy ? cv::Point2d(1, 0) : cv::Point2d(0, 1);
    e1 /= std::hypot(e1.x, e1.y);
  }
};

}  // namespace

Points detect_landmarks(const cv::Mat& image) {
  if (image.empty()) throw DetectionError("empty image");
  cv::Mat bgr;
  if (image.channels() == 1)
    cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR);
  else
    bgr = image;
  if (bgr.depth() != CV_8U) bgr.convertTo(bgr, CV_8U, 255.0);

  // Background colour: per-channel median of the border pixels.
  std::array<std::vector<int>, 3> border;
  auto take = [&](int y, int x) {
    const auto& px = bgr.at<cv::Vec3b>(y, x);
    for (int c = 0; c < 3; ++c) border[c].push_back(px[c]);
  };
  for (int x = 0; x < bgr.cols; ++x) {
    take(0, x);
    take(bgr.rows - 1, x);
  }
  for (int y = 1; y + 1 < bgr.rows; ++y) {
    take(y, 0);
    take(y, bgr.cols - 1);
  }
  cv::Vec3f bg;
  for (int c = 0; c < 3; ++c) {
    auto& v = border[c];
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    bg[c] = static_cast<float>(v[v.size() / 2]);
  }

  cv::Mat diff(bgr.size(), CV_32F);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const auto& px = bgr.at<cv::Vec3b>(y, x);
      float d = 0;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(px[c] - bg[c]));
      diff.at<float>(y, x) = d;
    }
  double max_diff = 0;
  cv::minMaxLoc(diff, nullptr, &max_diff);
  if (max_diff < 20) throw DetectionError("no face found: image is uniform");

  // Threshold halfway between background and the typical foreground contrast.
  cv::Mat coarse = diff > 20;
  std::vector<float> fg;
  for (int y = 0; y < diff.rows; ++y)
    for (int x = 0; x < diff.cols; ++x)
      if (coarse.at<uchar>(y, x)) fg.push_back(diff.at<float>(y, x));
  std::nth_element(fg.begin(), fg.begin() + fg.size() / 2, fg.end());
  const double thr = fg[fg.size() / 2] / 2.0;
  cv::Mat mask = diff > thr;

  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(mask, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
  if (contours.empty()) throw DetectionError("no face found");
  const auto largest = std::max_element(contours.begin(), contours.end(), [](const auto& a, const auto& b) {
    return cv::contourArea(a) < cv::contourArea(b);
  });
  if (cv::contourArea(*largest) < 0.02 * bgr.total()) throw DetectionError("no face found: foreground too small");
  cv::Mat head = cv::Mat::zeros(bgr.size(), CV_8U);
  cv::drawContours(head, contours, static_cast<int>(largest - contours.begin()), cv::Scalar(255), cv::FILLED);

  Accum head_acc;
  for (int y = 0; y < head.rows; ++y)
    for (int x = 0; x < head.cols; ++x)
      if (head.at<uchar>(y, x)) head_acc.add(x, y);
  cv::Point2d c, down;
  double l1, l2;
  head_acc.shape(c, l1, l2, down);
  if (down.y < 0) down = -down;
  const cv::Point2d right(down.y, -down.x);
  const double ry = 2.0 * std::sqrt(l1), rx = 2.0 * std::sqrt(l2);

  // Dark features inside the head, relative to the median skin brightness.
  cv::Mat gray;
  cv::cvtColor(bgr, gray, cv::COLOR_BGR2GRAY);
  std::vector<uchar> skin;
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x)
      if (head.at<uchar>(y, x)) skin.push_back(gray.at<uchar>(y, x));
  std::nth_element(skin.begin(), skin.begin() + skin.size() / 2, skin.end());
  const double dark_thr = 0.55 * skin[skin.size() / 2];
  cv::Mat dark = (gray < dark_thr) & head;

  cv::Mat labels;
  const int count = cv::connectedComponents(dark, labels, 8, CV_32S);
  std::vector<Accum> acc(count);
  for (int y = 0; y < labels.rows; ++y)
    for (int x = 0; x < labels.cols; ++x)
      if (int l = labels.at<int>(y, x); l > 0) acc[l].add(x, y);

  const double min_area = 4e-4 * head_acc.n;
  std::vector<Blob> left, right_side;
  for (int l = 1; l < count; ++l) {
    if (acc[l].n < min_area) continue;
    Blob b;
    b.area = acc[l].n;
    double a1, a2;
    acc[l].shape(b.centroid, a1, a2, b.major);
    b.semi_major = 2.0 * std::sqrt(a1);
    const cv::Point2d d = b.centroid - c;
    b.u = d.dot(right) / rx;
    b.v = d.dot(down) / ry;
    if (b.v > -0.1) continue;  // mouth and anything below the eyes
    (b.u < 0 ? left : right_side).push_back(b);
  }
  if (left.size() < 2 || right_side.size() < 2)
    throw DetectionError("no face found: expected eyes and brows on both sides");
  auto by_height = [](const Blob& a, const Blob& b) { return a.v < b.v; };
  std::sort(left.begin(), left.end(), by_height);
  std::sort(right_side.begin(), right_side.end(), by_height);
  const Blob& brow_r = right_side[0];
  Blob eye_l = left[1], eye_r = right_side[1];
  // Inner corners: the ends of each eye's major axis nearest the face centre line.
  if (eye_l.major.dot(right) < 0) eye_l.major = -eye_l.major;
  if (eye_r.major.dot(right) > 0) eye_r.major = -eye_r.major;

  const double phi = kChinSideDeg * std::numbers::pi / 180.0;
  return Points{
      c - rx * std::sin(phi) * right + ry * std::cos(phi) * down,
      c + ry * down,
      brow_r.centroid,
      eye_l.centroid + eye_l.semi_major * eye_l.major,
      eye_r.centroid + eye_r.semi_major * eye_r.major,
  };
}

}  // namespace moext::face
