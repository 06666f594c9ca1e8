#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moext/image.hpp"

namespace moext::augment {

struct ImagePair {
  ImageTensor onset;
  ImageTensor apex;
};

enum class Variant { Original, Mirror, Rotation };

struct AugmentedPair {
  ImagePair images;
  Variant variant = Variant::Original;
  double angle_deg = 0.0;   // rotations only
  std::size_t source = 0;   // index into the input list
};

inline constexpr int kRotationsPerPair = 8;
inline constexpr double kMaxRotationDeg = 10.0;
inline constexpr int kAugmentFactor = 2 + kRotationsPerPair;

ImageTensor mirror(const ImageTensor& image);
// Rotation about the image centre, bilinear, replicated borders.
ImageTensor rotate(const ImageTensor& image, double angle_deg);

// Each pair becomes itself, its mirror and 8 rotations by angles drawn from
// [-10, 10] degrees, the same angle for onset and apex.
std::vector<AugmentedPair> augment_training_set(const std::vector<ImagePair>& pairs, std::uint64_t seed);
// Entry k (0..9) of pair `source` in augment_training_set's output, computed
// on its own so large sets need not be held in memory.
AugmentedPair augment_variant(const ImagePair& pair, std::size_t source, int k, std::uint64_t seed);

enum class Op { Noise, Contrast, Grayscale };
inline constexpr int kOpCount = 3;
inline constexpr double kNoiseAmplitude = 0.05;
inline constexpr double kContrastGain = 1.3;

std::string to_string(Op op);

enum class Origin { Onset, Apex };

struct ExpansionSet {
  std::vector<ImageTensor> instances;  // instance 0 is the untouched source
  Origin origin = Origin::Onset;
  std::vector<Op> ops;                 // ops[k] produced instances[k + 1]
};

// Additive uniform noise in [-amplitude, amplitude] followed by clipping.
ImageTensor add_noise(const ImageTensor& image, std::uint64_t seed, double amplitude = kNoiseAmplitude);
// (x - mean) * gain + mean, clipped; mean over the whole image.
ImageTensor scale_contrast(const ImageTensor& image, double gain = kContrastGain);
// Luma replicated to three channels.
ImageTensor grayscale(const ImageTensor& image);

// m - 1 ops drawn without replacement; instance k of both sets gets the same
// op (and the same noise field).
std::pair<ExpansionSet, ExpansionSet> build_expansion_sets(const ImageTensor& onset, const ImageTensor& apex,
                                                           int m, std::uint64_t seed);

}  // namespace moext::augment
