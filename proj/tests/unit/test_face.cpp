#include <doctest.h>

#include <cmath>

#include <opencv2/core.hpp>

#include "moext/errors.hpp"
#include "moext/face.hpp"
#include "moext/synth.hpp"
#include "support.hpp"

using namespace moext;
using namespace moext::face;

namespace {

double dist(cv::Point2d a, cv::Point2d b) { return std::hypot(a.x - b.x, a.y - b.y); }

const synth::Expression kNeutral{};

}  // namespace

TEST_CASE("template puts the eyes near 0.35/0.65 W and 0.40 H") {
  const auto t = canonical_template(224);
  CHECK(t[3].y == doctest::Approx(0.40 * 224));
  CHECK(t[4].y == doctest::Approx(0.40 * 224));
  CHECK(t[3].x < 112);
  CHECK(t[4].x > 112);
  CHECK((t[3].x + t[4].x) / 2 == doctest::Approx(112));
  const auto half = canonical_template(112);
  for (int k = 0; k < 5; ++k) CHECK(dist(half[k] * 2.0, t[k]) < 1e-12);
}

TEST_CASE("similarity fit recovers a known transform") {
  Rng rng(11);
  const auto src = canonical_template();
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = Similarity::from(rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5),
                                    {rng.uniform(-40, 40), rng.uniform(-40, 40)});
    Points dst;
    for (int k = 0; k < 5; ++k) dst[k] = s.apply(src[k]);
    const auto fit = fit_similarity(src, dst);
    CHECK(fit.a == doctest::Approx(s.a).epsilon(1e-9));
    CHECK(fit.b == doctest::Approx(s.b).epsilon(1e-9));
    CHECK(std::abs(fit.tx - s.tx) < 1e-7);
    CHECK(std::abs(fit.ty - s.ty) < 1e-7);
    const auto back = s.inverse();
    for (int k = 0; k < 5; ++k) CHECK(dist(back.apply(dst[k]), src[k]) < 1e-9);
  }
}

TEST_CASE("canonical pose aligns with the identity") {
  const auto s = alignment_transform(canonical_template());
  CHECK(std::abs(s.a - 1) < 1e-6);
  CHECK(std::abs(s.b) < 1e-6);
  CHECK(std::abs(s.tx) < 1e-6);
  CHECK(std::abs(s.ty) < 1e-6);
}

TEST_CASE("detection on rendered faces") {
  const auto subject = synth::make_subject(3);
  SUBCASE("canonical pose: within 2 px of ground truth") {
    const auto pose = synth::centred_pose(224);
    const cv::Mat img = synth::render(subject, kNeutral, 0, pose, 224);
    const auto truth = synth::landmarks(subject.geometry, kNeutral, 0, pose);
    const auto found = detect_landmarks(img);
    for (int k = 0; k < 5; ++k) {
      INFO("point ", kLandmarkNumbers[k]);
      CHECK(dist(found[k], truth[k]) < 2.0);
    }
  }
  SUBCASE("mirrored face: the layout is symmetric, so points come back where they were") {
    const auto pose = synth::centred_pose(224);
    cv::Mat img = synth::render(subject, kNeutral, 0, pose, 224), flipped;
    cv::flip(img, flipped, 1);
    const auto truth = synth::landmarks(subject.geometry, kNeutral, 0, pose);
    const auto found = detect_landmarks(flipped);
    for (int k = 0; k < 5; ++k) CHECK(dist(found[k], truth[k]) < 2.0);
    // inner eye corners swap under reflection
    CHECK(dist(reflect(found[3], 224), truth[4]) < 2.0);
    CHECK(dist(reflect(reflect(truth[0], 224), 224), truth[0]) < 1e-12);
  }
  SUBCASE("known affine: recovered points land on the template") {
    // neutral geometry, which is what the template is built from
    synth::Subject plain;
    plain.look = subject.look;
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
      const auto pose = synth::centred_pose(256, rng.uniform(0.9, 1.1), rng.uniform(-8, 8),
                                            {rng.uniform(-10, 10), rng.uniform(-10, 10)});
      const cv::Mat img = synth::render(plain, kNeutral, 0, pose, 256);
      const auto truth = synth::landmarks(plain.geometry, kNeutral, 0, pose);
      // analytic inverse of the known pose
      const auto inv = pose.inverse();
      const auto tmpl = canonical_template();
      for (int k = 0; k < 5; ++k) CHECK(dist(inv.apply(truth[k]), tmpl[k]) < 1e-9);
      const auto to_crop = alignment_transform(detect_landmarks(img));
      for (int k = 0; k < 5; ++k) {
        INFO("trial ", trial, " point ", kLandmarkNumbers[k]);
        CHECK(dist(to_crop.apply(truth[k]), tmpl[k]) < 1.0);
      }
    }
  }
  SUBCASE("blank image") {
    CHECK_THROWS_AS(detect_landmarks(cv::Mat(224, 224, CV_8UC3, cv::Scalar(128, 128, 128))), DetectionError);
    CHECK_THROWS_AS(detect_landmarks(cv::Mat(224, 224, CV_8UC3, cv::Scalar(0, 0, 0))), DetectionError);
  }
}

TEST_CASE("align_and_crop output contract") {
  const auto subject = synth::make_subject(8);
  const auto pose = synth::centred_pose(300, 1.2, 5);
  const cv::Mat img = synth::render(subject, kNeutral, 0, pose, 300);
  const auto crop = align_and_crop(img, synth::landmarks(subject.geometry, kNeutral, 0, pose));
  CHECK(crop.shape() == Shape{1, 3, 224, 224});
  CHECK(is_valid_image(crop));
  Points outside = canonical_template();
  outside[0].x = -3;
  CHECK_THROWS(align_and_crop(img, outside));
}
