#include "moext/augment.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

#include "moext/rng.hpp"

namespace moext::augment {

ImageTensor mirror(const ImageTensor& image) {
  ImageTensor out(image.shape());
  const int w = image.w();
  for (int i = 0; i < image.n(); ++i)
    for (int c = 0; c < image.c(); ++c)
      for (int y = 0; y < image.h(); ++y)
        for (int x = 0; x < w; ++x) out.at(i, c, y, x) = image.at(i, c, y, w - 1 - x);
  return out;
}

ImageTensor rotate(const ImageTensor& image, double angle_deg) {
  const cv::Mat src = to_mat_f32(image);
  const cv::Point2f centre((src.cols - 1) / 2.0f, (src.rows - 1) / 2.0f);
  const cv::Mat rot = cv::getRotationMatrix2D(centre, angle_deg, 1.0);
  cv::Mat dst;
  cv::warpAffine(src, dst, rot, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  ImageTensor out = to_tensor(dst);
  for (auto& v : out.vec()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

AugmentedPair augment_variant(const ImagePair& pair, std::size_t source, int k, std::uint64_t seed) {
  if (k < 0 || k >= kAugmentFactor) throw ConfigError("augmentation variant index out of range");
  if (k == 0) return {pair, Variant::Original, 0.0, source};
  if (k == 1) return {{mirror(pair.onset), mirror(pair.apex)}, Variant::Mirror, 0.0, source};
  Rng rng(derive_seed(seed, source));
  double angle = 0.0;
  for (int r = 0; r <= k - 2; ++r) angle = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
  return {{rotate(pair.onset, angle), rotate(pair.apex, angle)}, Variant::Rotation, angle, source};
}

std::vector<AugmentedPair> augment_training_set(const std::vector<ImagePair>& pairs, std::uint64_t seed) {
  std::vector<AugmentedPair> out;
  out.reserve(pairs.size() * kAugmentFactor);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    for (int k = 0; k < kAugmentFactor; ++k) out.push_back(augment_variant(pairs[i], i, k, seed));
  return out;
}

std::string to_string(Op op) {
  switch (op) {
    case Op::Noise: return "noise";
    case Op::Contrast: return "contrast";
    case Op::Grayscale: return "grayscale";
  }
  return "?";
}

ImageTensor add_noise(const ImageTensor& image, std::uint64_t seed, double amplitude) {
  Rng rng(seed);
  ImageTensor out = image;
  for (auto& v : out.vec())
    v = std::clamp(v + static_cast<float>(rng.uniform(-amplitude, amplitude)), 0.0f, 1.0f);
  return out;
}

ImageTensor scale_contrast(const ImageTensor& image, double gain) {
  double mean = 0.0;
  for (float v : image.vec()) mean += v;
  mean /= static_cast<double>(image.size());
  ImageTensor out = image;
  for (auto& v : out.vec()) v = static_cast<float>(std::clamp((v - mean) * gain + mean, 0.0, 1.0));
  return out;
}

ImageTensor grayscale(const ImageTensor& image) {
  if (image.c() != 3) throw ShapeError("grayscale expects 3 channels");
  ImageTensor out(image.shape());
  for (int i = 0; i < image.n(); ++i)
    for (int y = 0; y < image.h(); ++y)
      for (int x = 0; x < image.w(); ++x) {
        const float l = 0.299f * image.at(i, 0, y, x) + 0.587f * image.at(i, 1, y, x) +
                        0.114f * image.at(i, 2, y, x);
        for (int c = 0; c < 3; ++c) out.at(i, c, y, x) = l;
      }
  return out;
}

std::pair<ExpansionSet, ExpansionSet> build_expansion_sets(const ImageTensor& onset, const ImageTensor& apex,
                                                           int m, std::uint64_t seed) {
  if (m < 2) throw ConfigError("expansion sets need m >= 2");
  if (m - 1 > kOpCount)
    throw ConfigError("m - 1 = " + std::to_string(m - 1) + " exceeds the " + std::to_string(kOpCount) +
                      " available augmentation ops");
  if (!(onset.shape() == apex.shape())) throw ShapeError("onset and apex shapes differ");
  Rng rng(seed);
  std::vector<Op> ops{Op::Noise, Op::Contrast, Op::Grayscale};
  rng.shuffle(ops.begin(), ops.end());
  ops.resize(static_cast<std::size_t>(m - 1));
  const std::uint64_t noise_seed = rng.next_u64();

  ExpansionSet so{{onset}, Origin::Onset, ops}, sa{{apex}, Origin::Apex, ops};
  for (Op op : ops) {
    switch (op) {
      case Op::Noise:
        so.instances.push_back(add_noise(onset, noise_seed));
        sa.instances.push_back(add_noise(apex, noise_seed));
        break;
      case Op::Contrast:
        so.instances.push_back(scale_contrast(onset));
        sa.instances.push_back(scale_contrast(apex));
        break;
      case Op::Grayscale:
        so.instances.push_back(grayscale(onset));
        sa.instances.push_back(grayscale(apex));
        break;
    }
  }
  return {std::move(so), std::move(sa)};
}

}  // namespace moext::augment
