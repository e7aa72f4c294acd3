#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "seclm/error.hpp"
#include "seclm/geometry.hpp"
#include "support/gradcheck.hpp"

using namespace seclm;
using namespace seclm::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Config;
}

Pose3D random_pose(std::mt19937_64& rng, std::size_t p = 5, std::size_t s = 4) {
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  Pose3D pose;
  for (std::size_t k = 0; k < p; ++k) pose.primary.emplace_back(u(rng), u(rng), u(rng));
  for (std::size_t k = 0; k < s; ++k) pose.secondary.emplace_back(u(rng), u(rng), u(rng));
  return pose;
}

ad::Tensor to_tensor(const std::vector<Vec3>& pts) {
  ad::Tensor t({pts.size(), 3});
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int c = 0; c < 3; ++c) t.at(i, c) = pts[i][c];
  return t;
}

}  // namespace

TEST(Geometry, TriangulationRecoversNoiseFreePoints) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto [ci, cj] = random_camera_pair(rng);
    const Vec3 x = random_unit(rng) * 0.5;
    const auto tri = geometry::triangulate_dlt(geometry::project(ci, x), geometry::project(cj, x), ci, cj);
    EXPECT_LT((tri.point - x).norm(), 1e-9);
    EXPECT_FALSE(tri.low_confidence);
  }
}

TEST(Geometry, ProjectionMatchesMatrixForm) {
  std::mt19937_64 rng(12);
  const auto [cam, other] = random_camera_pair(rng);
  (void)other;
  const Vec3 x(0.1, -0.2, 0.3);
  const Eigen::Vector3d h = cam.projection_matrix() * x.homogeneous();
  EXPECT_LT((geometry::project(cam, x) - h.hnormalized()).norm(), 1e-12);
  EXPECT_NEAR(geometry::depth(cam, x), h.z(), 1e-12);
  EXPECT_LT((cam.center() - (-cam.R.transpose() * cam.t)).norm(), 1e-15);
}

TEST(Geometry, ZeroBaselineIsDegenerate) {
  const CameraParams c = look_at(Vec3(0, -4, 0), Vec3::Zero());
  EXPECT_EQ(kind_of([&] { geometry::triangulate_dlt(Vec2(30, 30), Vec2(31, 30), c, c); }), ErrorKind::Degenerate);
}

TEST(Geometry, NearlyParallelRaysAreLowConfidence) {
  const CameraParams ci = look_at(Vec3(0, -4, 0), Vec3::Zero());
  const CameraParams cj = look_at(Vec3(1e-9, -4, 0), Vec3::Zero());
  const Vec3 x(0.1, 0.0, 0.2);
  const auto tri = geometry::triangulate_dlt(geometry::project(ci, x), geometry::project(cj, x), ci, cj);
  EXPECT_TRUE(tri.low_confidence);
}

TEST(Geometry, CanonicalFrameProperties) {
  std::mt19937_64 rng(13);
  const FrameSpec frame{0, 1, 2};
  for (int trial = 0; trial < 20; ++trial) {
    const Pose3D pose = random_pose(rng);
    const auto [canon, T] = geometry::normalize_pose(pose, frame);
    EXPECT_TRUE(canon.canonical);
    EXPECT_LT(canon.primary[0].norm(), 1e-12);
    EXPECT_LT((canon.primary[1] - Vec3::UnitX()).norm(), 1e-12);
    EXPECT_NEAR(canon.primary[2].z(), 0.0, 1e-12);
    EXPECT_GT(canon.primary[2].y(), 0.0);
    for (std::size_t k = 0; k < pose.secondary.size(); ++k)
      EXPECT_LT((T.invert(canon.secondary[k]) - pose.secondary[k]).norm(), 1e-12);
  }
}

TEST(Geometry, CanonicalFrameIsSimilarityInvariant) {
  std::mt19937_64 rng(14);
  const FrameSpec frame{0, 1, 2};
  for (int trial = 0; trial < 20; ++trial) {
    const Pose3D pose = random_pose(rng);
    SimilarityTransform S;
    S.s = std::uniform_real_distribution<double>(0.2, 5.0)(rng);
    S.R = random_rotation(rng);
    S.t = random_unit(rng) * 3.0;
    const auto a = geometry::normalize_pose(pose, frame).first;
    const auto b = geometry::normalize_pose(geometry::transform_pose(pose, S), frame).first;
    for (std::size_t k = 0; k < pose.primary.size(); ++k) EXPECT_LT((a.primary[k] - b.primary[k]).norm(), 1e-10);
    for (std::size_t k = 0; k < pose.secondary.size(); ++k) EXPECT_LT((a.secondary[k] - b.secondary[k]).norm(), 1e-10);
  }
}

TEST(Geometry, DegenerateFramesThrow) {
  const FrameSpec frame{0, 1, 2};
  Pose3D coincident;
  coincident.primary = {Vec3::Zero(), Vec3::Zero(), Vec3::UnitY()};
  EXPECT_EQ(kind_of([&] { geometry::normalize_pose(coincident, frame); }), ErrorKind::Degenerate);
  Pose3D collinear;
  collinear.primary = {Vec3::Zero(), Vec3::UnitX(), 2.0 * Vec3::UnitX()};
  EXPECT_EQ(kind_of([&] { geometry::normalize_pose(collinear, frame); }), ErrorKind::Degenerate);
  Pose3D short_pose;
  short_pose.primary = {Vec3::Zero(), Vec3::UnitX()};
  EXPECT_EQ(kind_of([&] { geometry::normalize_pose(short_pose, frame); }), ErrorKind::Precondition);
}

TEST(Geometry, SimilarityComposeAndInverse) {
  std::mt19937_64 rng(15);
  SimilarityTransform a{1.7, random_rotation(rng), Vec3(1, 2, 3)};
  SimilarityTransform b{0.4, random_rotation(rng), Vec3(-1, 0, 2)};
  const Vec3 x(0.3, -0.7, 1.1);
  EXPECT_LT((a.compose(b).apply(x) - a.apply(b.apply(x))).norm(), 1e-12);
  EXPECT_LT((a.inverse().apply(a.apply(x)) - x).norm(), 1e-12);
  SimilarityTransform bad;
  bad.s = -1.0;
  EXPECT_EQ(kind_of([&] { bad.validate(); }), ErrorKind::Precondition);
}

TEST(Geometry, ProcrustesRecoversSimilarity) {
  std::mt19937_64 rng(16);
  const Pose3D pose = random_pose(rng, 6, 0);
  SimilarityTransform S{2.5, random_rotation(rng), Vec3(0.5, -1.0, 4.0)};
  std::vector<Vec3> target;
  for (const auto& p : pose.primary) target.push_back(S.apply(p));
  const auto T = geometry::procrustes_align(pose.primary, target);
  EXPECT_NEAR(T.s, S.s, 1e-10);
  EXPECT_LT((T.R - S.R).norm(), 1e-10);
  EXPECT_LT((T.t - S.t).norm(), 1e-10);
  const std::vector<Vec3> two{Vec3::Zero(), Vec3::UnitX()};
  EXPECT_EQ(kind_of([&] { geometry::procrustes_align(two, two); }), ErrorKind::Precondition);
}

TEST(Geometry, Canonical2dFrame) {
  const std::vector<Vec2> pts{Vec2(3, 4), Vec2(3, 6), Vec2(1, 5)};
  const auto T = geometry::canonical_transform_2d(pts, FrameSpec{0, 1, 2});
  EXPECT_LT(T.apply(pts[0]).norm(), 1e-12);
  EXPECT_LT((T.apply(pts[1]) - Vec2(1, 0)).norm(), 1e-12);
  EXPECT_LT((T.invert(T.apply(pts[2])) - pts[2]).norm(), 1e-12);
}

TEST(GeometryAd, ProjectionMatchesPlainAndGradchecks) {
  std::mt19937_64 rng(17);
  const auto [cam, other] = random_camera_pair(rng);
  (void)other;
  const Pose3D pose = random_pose(rng, 4, 0);
  ad::Tape t;
  const auto px = geometry::ad::project_points(t.constant(to_tensor(pose.primary)), cam);
  for (std::size_t k = 0; k < 4; ++k) {
    const Vec2 z = geometry::project(cam, pose.primary[k]);
    EXPECT_NEAR(px.value().at(k, 0), z.x(), 1e-10);
    EXPECT_NEAR(px.value().at(k, 1), z.y(), 1e-10);
  }
  const auto r = check_gradient(
      [&](ad::Tape&, const ad::Var& v) { return ad::sum(ad::square(geometry::ad::project_points(v, cam))); },
      to_tensor(pose.primary));
  EXPECT_LT(r.relative(), 1e-6);
}

TEST(GeometryAd, TriangulationMatchesPlainAndGradchecks) {
  std::mt19937_64 rng(18);
  const auto [ci, cj] = random_camera_pair(rng);
  const Vec3 x(0.2, -0.1, 0.3);
  const Vec2 zi = geometry::project(ci, x), zj = geometry::project(cj, x);
  ad::Tape t;
  const auto p = geometry::ad::triangulate(t.constant(ad::Tensor::vector({zi.x(), zi.y()})),
                                           t.constant(ad::Tensor::vector({zj.x(), zj.y()})), ci, cj);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(p.value()[c], x[c], 1e-9);
  const ad::Tensor zj_t = ad::Tensor::vector({zj.x() + 0.7, zj.y() - 0.4});
  const auto r = check_gradient(
      [&](ad::Tape& tape, const ad::Var& v) {
        return ad::sum(ad::square(geometry::ad::triangulate(v, tape.constant(zj_t), ci, cj)));
      },
      ad::Tensor::vector({zi.x(), zi.y()}), 1e-5);
  EXPECT_LT(r.relative(), 1e-5);
}

TEST(GeometryAd, CanonicalFrameMatchesPlainAndRoundTrips) {
  std::mt19937_64 rng(19);
  const FrameSpec frame{0, 1, 2};
  const Pose3D pose = random_pose(rng);
  const auto canon = geometry::normalize_pose(pose, frame).first;
  ad::Tape t;
  const auto f = geometry::ad::canonical_frame(t.constant(to_tensor(pose.primary)), frame);
  const auto c = geometry::ad::to_canonical(f, t.constant(to_tensor(pose.secondary)));
  const auto back = geometry::ad::from_canonical(f, c);
  for (std::size_t k = 0; k < pose.secondary.size(); ++k)
    for (int d = 0; d < 3; ++d) {
      EXPECT_NEAR(c.value().at(k, d), canon.secondary[k][d], 1e-10);
      EXPECT_NEAR(back.value().at(k, d), pose.secondary[k][d], 1e-10);
    }
  const auto sec = to_tensor(pose.secondary);
  const auto r = check_gradient(
      [&](ad::Tape& tape, const ad::Var& v) {
        return ad::sum(ad::square(geometry::ad::to_canonical(geometry::ad::canonical_frame(v, frame), tape.constant(sec))));
      },
      to_tensor(pose.primary));
  EXPECT_LT(r.relative(), 1e-6);
}

TEST(Geometry, RigJsonRoundTrip) {
  std::mt19937_64 rng(20);
  auto [a, b] = random_camera_pair(rng);
  a.name = "left";
  b.name = "right";
  const auto path = std::filesystem::temp_directory_path() / "seclm_rig_roundtrip.json";
  geometry::save_rig(path, {a, b});
  const Rig r = geometry::load_rig(path);
  std::filesystem::remove(path);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].name, "right");
  EXPECT_EQ((r[0].K - a.K).norm(), 0.0);
  EXPECT_EQ((r[1].R - b.R).norm(), 0.0);
  EXPECT_EQ(r[0].width, 64);
  EXPECT_THROW(geometry::load_rig(path), Error);
}
