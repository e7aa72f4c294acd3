#include <gtest/gtest.h>

#include <random>

#include "seclm/detector.hpp"
#include "seclm/error.hpp"
#include "support/gradcheck.hpp"

using namespace seclm;
using seclm::testing::check_gradient;
using seclm::testing::random_tensor;

namespace {

DetectorConfig tiny() {
  DetectorConfig c;
  c.image_size = 16;
  c.stage_channels = {4, 4, 4};
  c.feature_dim = 5;
  c.primary_count = 2;
  c.secondary_count = 1;
  return c;
}

}  // namespace

TEST(Detector, OutputShapes) {
  const DetectorConfig c;
  const auto params = init_detector(c, 1);
  ad::Tape t;
  std::mt19937_64 rng(31);
  const auto out = detector_forward(c, ad::bind(t, params), t.constant(random_tensor({64 * 64, 3}, rng, 0.0, 1.0)));
  EXPECT_EQ(out.logits.shape(), (ad::Shape{256, 20}));
  EXPECT_EQ(out.heatmaps.shape(), (ad::Shape{20, 256}));
  EXPECT_EQ(out.features.shape(), (ad::Shape{256, 32}));
  EXPECT_EQ(out.keypoints.shape(), (ad::Shape{19, 2}));
  for (std::size_t k = 0; k < 20; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < 256; ++i) s += out.heatmaps.value().at(k, i);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Detector, ZeroHeadPredictsImageCentre) {
  const DetectorConfig c;
  Image img(3, 64, 64, 0.3f);
  img.at(0, 5, 7) = 1.0f;
  const Detection d = detect(c, init_detector(c, 2, true), img);
  ASSERT_EQ(d.pose.primary.size(), 13u);
  ASSERT_EQ(d.pose.secondary.size(), 6u);
  for (const auto& p : d.pose.primary) EXPECT_LT((p - Vec2(31.5, 31.5)).norm(), 1e-10);
  for (const auto& p : d.pose.secondary) EXPECT_LT((p - Vec2(31.5, 31.5)).norm(), 1e-10);
}

TEST(Detector, SoftArgmaxOfDeltaAndUniform) {
  ad::Tape t;
  ad::Tensor delta({4 * 5}, 0.0);
  delta[1 * 5 + 3] = 200.0;  // row 1, column 3
  const auto p = soft_argmax(t.constant(delta), 4, 5).value();
  EXPECT_NEAR(p[0], 3.0, 1e-12);
  EXPECT_NEAR(p[1], 1.0, 1e-12);
  const auto u = soft_argmax(t.constant(ad::Tensor({20}, 0.7)), 4, 5).value();
  EXPECT_NEAR(u[0], 2.0, 1e-12);
  EXPECT_NEAR(u[1], 1.5, 1e-12);
  // Higher temperature flattens towards the uniform centre.
  const auto hot = soft_argmax(t.constant(delta), 4, 5, 1e6).value();
  EXPECT_NEAR(hot[0], 2.0, 1e-3);
  EXPECT_THROW(soft_argmax(t.constant(delta), 3, 5), Error);
}

TEST(Detector, GridPixelMappingIsInverse) {
  for (double x : {-0.5, 0.0, 1.5, 31.5, 63.0}) EXPECT_NEAR(grid_to_pixel(pixel_to_grid(x, 4), 4), x, 1e-12);
  EXPECT_DOUBLE_EQ(grid_to_pixel(0.0, 4), 1.5);
}

TEST(Detector, SampleFeatureAtCellCentresAndClamping) {
  std::mt19937_64 rng(32);
  const ad::Tensor f = random_tensor({3 * 4, 2}, rng);
  ad::Tape t;
  const auto fv = t.constant(f);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      bool oob = true;
      const auto s = sample_feature(fv, 3, 4, 4, t.constant(ad::Tensor::vector({grid_to_pixel(x, 4), grid_to_pixel(y, 4)})), &oob);
      EXPECT_FALSE(oob);
      EXPECT_NEAR(s.value()[0], f.at(y * 4 + x, 0), 1e-12);
      EXPECT_NEAR(s.value()[1], f.at(y * 4 + x, 1), 1e-12);
    }
  bool oob = false;
  const auto s = sample_feature(fv, 3, 4, 4, t.constant(ad::Tensor::vector({-50.0, 100.0})), &oob);
  EXPECT_TRUE(oob);
  EXPECT_NEAR(s.value()[0], f.at(2 * 4 + 0, 0), 1e-12);
  // Midway between two horizontal neighbours.
  const auto mid = sample_feature(fv, 3, 4, 4, t.constant(ad::Tensor::vector({grid_to_pixel(1.5, 4), grid_to_pixel(0, 4)}))).value();
  EXPECT_NEAR(mid[1], 0.5 * (f.at(1, 1) + f.at(2, 1)), 1e-12);
}

TEST(Detector, SampleFeatureGradients) {
  std::mt19937_64 rng(33);
  const ad::Tensor f = random_tensor({3 * 4, 3}, rng);
  const ad::Tensor w = random_tensor({3}, rng);
  const ad::Tensor pos = ad::Tensor::vector({5.3, 6.1});
  auto r = check_gradient(
      [&](ad::Tape& t, const ad::Var& v) { return ad::dot(sample_feature(t.constant(f), 3, 4, 4, v), t.constant(w)); }, pos);
  EXPECT_LT(r.relative(), 1e-6);
  r = check_gradient(
      [&](ad::Tape& t, const ad::Var& v) { return ad::sum(ad::square(sample_feature(v, 3, 4, 4, t.constant(pos)))); }, f);
  EXPECT_LT(r.relative(), 1e-6);
}

TEST(Detector, ForwardGradientsOnTinyConfig) {
  const DetectorConfig c = tiny();
  const auto params = init_detector(c, 3);
  std::mt19937_64 rng(34);
  const ad::Tensor img = random_tensor({16 * 16, 3}, rng, 0.0, 1.0);
  auto loss = [&](const ad::BoundParameters& b, const ad::Var& image) {
    const auto out = detector_forward(c, b, image);
    return ad::sum(ad::square(out.keypoints)) * 1e-2 + ad::sum(out.features);
  };
  for (const std::string name : {"detector/head/weight", "detector/feature/weight", "detector/conv1/weight"}) {
    const auto r = check_gradient(
        [&](ad::Tape& t, const ad::Var& v) {
          auto b = ad::bind(t, params, false);
          b[name] = v;
          return loss(b, t.constant(img));
        },
        params.at(name));
    EXPECT_LT(r.relative(), 1e-4) << name;
  }
  const auto r = check_gradient([&](ad::Tape& t, const ad::Var& v) { return loss(ad::bind(t, params, false), v); }, img);
  EXPECT_LT(r.relative(), 1e-4);
}

TEST(Detector, ConfigAndShapeErrors) {
  DetectorConfig bad;
  bad.image_size = 30;
  EXPECT_THROW(bad.validate(), Error);
  bad = DetectorConfig{};
  bad.temperature = 0.0;
  EXPECT_THROW(init_detector(bad, 1), Error);
  const DetectorConfig c = tiny();
  try {
    detect(c, init_detector(c, 1), Image(3, 8, 8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Detector, InitIsDeterministicPerSeed) {
  const DetectorConfig c = tiny();
  const auto a = init_detector(c, 9), b = init_detector(c, 9), d = init_detector(c, 10);
  EXPECT_EQ(a.at("detector/conv2/weight").storage(), b.at("detector/conv2/weight").storage());
  EXPECT_NE(a.at("detector/conv2/weight").storage(), d.at("detector/conv2/weight").storage());
}
