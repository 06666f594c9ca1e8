#include <doctest.h>

#include <cmath>
#include <set>

#include "moext/augment.hpp"
#include "moext/errors.hpp"
#include "support.hpp"

using namespace moext;
using namespace moext::augment;
using testing::random_tensor;

namespace {

ImageTensor img(Rng& rng, int size = 12) { return random_tensor<float>({1, 3, size, size}, rng, 0.0f, 1.0f); }

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  double m = 0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(double(a.data()[k]) - b.data()[k]));
  return m;
}

}  // namespace

TEST_CASE("augmented set is ten times the input") {
  Rng rng(1);
  std::vector<ImagePair> pairs;
  for (int n = 1; n <= 50; ++n) {
    pairs.push_back({img(rng, 6), img(rng, 6)});
    const auto out = augment_training_set(pairs, 9);
    REQUIRE(out.size() == 10 * pairs.size());
  }
  const auto out = augment_training_set(pairs, 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    int originals = 0, mirrors = 0, rotations = 0;
    for (int k = 0; k < kAugmentFactor; ++k) {
      const auto& a = out[i * kAugmentFactor + static_cast<std::size_t>(k)];
      CHECK(a.source == i);
      originals += a.variant == Variant::Original;
      mirrors += a.variant == Variant::Mirror;
      if (a.variant == Variant::Rotation) {
        ++rotations;
        CHECK(a.angle_deg >= -10.0);
        CHECK(a.angle_deg <= 10.0);
      }
    }
    CHECK(originals == 1);
    CHECK(mirrors == 1);
    CHECK(rotations == 8);
  }
}

TEST_CASE("variants: original, mirror, shared rotation angle") {
  Rng rng(2);
  const ImagePair p{img(rng), img(rng)};
  const auto out = augment_training_set({p}, 4);
  CHECK(out[0].images.onset.vec() == p.onset.vec());
  CHECK(out[0].images.apex.vec() == p.apex.vec());
  CHECK(out[1].images.onset.vec() == mirror(p.onset).vec());
  CHECK(out[1].images.apex.vec() == mirror(p.apex).vec());
  std::set<double> angles;
  for (int k = 2; k < kAugmentFactor; ++k) {
    const auto& a = out[static_cast<std::size_t>(k)];
    angles.insert(a.angle_deg);
    CHECK(a.images.onset.vec() == rotate(p.onset, a.angle_deg).vec());
    CHECK(a.images.apex.vec() == rotate(p.apex, a.angle_deg).vec());
    const auto alone = augment_variant(p, 0, k, 4);
    CHECK(alone.angle_deg == a.angle_deg);
    CHECK(alone.images.onset.vec() == a.images.onset.vec());
  }
  CHECK(angles.size() == 8);
  const auto again = augment_training_set({p}, 4);
  for (std::size_t k = 0; k < out.size(); ++k) CHECK(again[k].images.apex.vec() == out[k].images.apex.vec());
  CHECK(augment_training_set({p}, 5)[2].angle_deg != out[2].angle_deg);
}

TEST_CASE("angles stay in range over many seeds") {
  Rng rng(3);
  const ImagePair p{img(rng, 4), img(rng, 4)};
  for (std::uint64_t seed = 0; seed < 200; ++seed)
    for (int k = 2; k < kAugmentFactor; ++k) {
      const double a = augment_variant(p, seed % 7, k, seed).angle_deg;
      CHECK(std::abs(a) <= kMaxRotationDeg);
    }
}

TEST_CASE("mirror is an involution; zero rotation is the identity") {
  Rng rng(4);
  const auto x = img(rng, 9);
  CHECK(mirror(mirror(x)).vec() == x.vec());
  const auto m = mirror(x);
  CHECK(m.at(0, 1, 2, 0) == x.at(0, 1, 2, 8));
  CHECK(max_abs_diff(rotate(x, 0.0), x) < 1e-6);
  const auto r = rotate(x, 7.0);
  CHECK(r.shape() == x.shape());
}

TEST_CASE("expansion sets") {
  Rng rng(5);
  const auto on = img(rng), ap = img(rng);
  SUBCASE("m = 3") {
    const auto [s, t] = build_expansion_sets(on, ap, 3, 17);
    REQUIRE(s.instances.size() == 3);
    REQUIRE(t.instances.size() == 3);
    CHECK(s.origin == Origin::Onset);
    CHECK(t.origin == Origin::Apex);
    CHECK(s.instances[0].vec() == on.vec());
    CHECK(t.instances[0].vec() == ap.vec());
    CHECK(s.ops == t.ops);
    REQUIRE(s.ops.size() == 2);
    CHECK(s.ops[0] != s.ops[1]);
    for (std::size_t k = 0; k < s.ops.size(); ++k) {
      const auto& a = s.instances[k + 1];
      const auto& b = t.instances[k + 1];
      for (const auto* x : {&a, &b})
        for (float v : x->vec()) {
          CHECK(v >= 0.0f);
          CHECK(v <= 1.0f);
        }
      switch (s.ops[k]) {
        case Op::Noise:
          CHECK(max_abs_diff(a, on) <= kNoiseAmplitude + 1e-7);
          CHECK(max_abs_diff(b, ap) <= kNoiseAmplitude + 1e-7);
          break;
        case Op::Grayscale:
          CHECK(a.vec() == grayscale(on).vec());
          break;
        case Op::Contrast:
          CHECK(a.vec() == scale_contrast(on).vec());
          break;
      }
    }
    const auto [s2, t2] = build_expansion_sets(on, ap, 3, 17);
    for (std::size_t k = 0; k < 3; ++k) CHECK(t2.instances[k].vec() == t.instances[k].vec());
  }
  SUBCASE("all three ops, every m") {
    for (int m = 2; m <= 4; ++m) {
      const auto [s, t] = build_expansion_sets(on, ap, m, 1);
      CHECK(s.instances.size() + t.instances.size() == static_cast<std::size_t>(2 * m));
    }
    CHECK_THROWS_AS(build_expansion_sets(on, ap, 5, 1), ConfigError);
    CHECK_THROWS_AS(build_expansion_sets(on, ap, 1, 1), ConfigError);
  }
  SUBCASE("op choice varies with the seed") {
    std::set<std::vector<Op>> seen;
    for (std::uint64_t seed = 0; seed < 40; ++seed) seen.insert(build_expansion_sets(on, ap, 2, seed).first.ops);
    CHECK(seen.size() == 3);
  }
}

TEST_CASE("augmentation ops") {
  Rng rng(6);
  const auto x = img(rng, 10);
  const auto g = grayscale(x);
  for (int y = 0; y < 10; ++y)
    for (int c = 0; c < 10; ++c) {
      CHECK(g.at(0, 0, y, c) == g.at(0, 1, y, c));
      CHECK(g.at(0, 1, y, c) == g.at(0, 2, y, c));
    }
  const auto n = add_noise(x, 3);
  CHECK(max_abs_diff(n, x) <= kNoiseAmplitude + 1e-7);
  CHECK(max_abs_diff(n, x) > 0.0);
  CHECK(add_noise(x, 3).vec() == n.vec());
  // contrast oracle
  double mean = 0;
  for (float v : x.vec()) mean += v;
  mean /= static_cast<double>(x.size());
  const auto c = scale_contrast(x);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double want = std::clamp((x.data()[k] - mean) * kContrastGain + mean, 0.0, 1.0);
    CHECK(std::abs(c.data()[k] - want) < 1e-6);
  }
}
