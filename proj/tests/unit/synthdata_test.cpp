#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "seclm/dataset_io.hpp"
#include "seclm/error.hpp"
#include "seclm/subspace.hpp"
#include "seclm/synthdata.hpp"

using namespace seclm;

namespace {

const Vec3& landmark(const Pose3D& p, const SkeletonSpec& s, std::size_t l) {
  return s.is_primary[l] ? p.primary[s.block_index(l)] : p.secondary[s.block_index(l)];
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Pose3D collapsed_pose(const SkeletonSpec& s, const Vec3& at) {
  return Pose3D{std::vector<Vec3>(s.primary_count(), at), std::vector<Vec3>(s.secondary_count(), at), false};
}

GeneratorConfig small_generator() {
  GeneratorConfig g;
  g.train_frames = 30;
  g.test_frames = 4;
  g.image_frames = 6;
  return g;
}

}  // namespace

TEST(Synthdata, DefaultSkeletonIsValid) {
  const SkeletonSpec s = default_skeleton();
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.primary_count(), 13u);
  EXPECT_EQ(s.secondary_count(), 6u);
  for (const char* n : {"r_hand", "l_hand", "r_shoulder", "l_shoulder"}) EXPECT_NO_THROW(s.primary_index(n));
  // Close a two-node loop between a landmark and its (non-root) parent.
  SkeletonSpec cyclic = s;
  std::size_t child = 0;
  while (s.parents[child] < 0 || s.parents[static_cast<std::size_t>(s.parents[child])] < 0) ++child;
  cyclic.parents[static_cast<std::size_t>(s.parents[child])] = static_cast<int>(child);
  EXPECT_THROW(cyclic.validate(), Error);
}

TEST(Synthdata, SampledPosesPreserveBoneLengths) {
  const SkeletonSpec s = default_skeleton();
  const PoseModel m = make_pose_model(s, {});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Pose3D p = sample_pose(s, m, seed);
    for (std::size_t l = 0; l < s.landmark_count(); ++l) {
      if (s.parents[l] < 0) continue;
      const double d = (landmark(p, s, l) - landmark(p, s, static_cast<std::size_t>(s.parents[l]))).norm();
      EXPECT_NEAR(d, s.bone_length(l), 1e-9) << s.names[l];
    }
  }
}

TEST(Synthdata, ZeroVarianceModelAlwaysGivesTheMeanPose) {
  const SkeletonSpec s = default_skeleton();
  PoseModelConfig c;
  c.residual_sigma = 0.0;
  c.heading_range = 0.0;
  c.translation_range = 0.0;
  PoseModel m = make_pose_model(s, c);
  m.basis.setZero();
  const Pose3D mean = forward_kinematics(s, m.mean, 0.0, Vec3::Zero());
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    const Pose3D p = sample_pose(s, m, seed);
    for (std::size_t k = 0; k < p.primary.size(); ++k) EXPECT_LT((p.primary[k] - mean.primary[k]).norm(), 1e-12);
    for (std::size_t k = 0; k < p.secondary.size(); ++k) EXPECT_LT((p.secondary[k] - mean.secondary[k]).norm(), 1e-12);
  }
}

TEST(Synthdata, CanonicalPosesAreLowRank) {
  const SkeletonSpec s = default_skeleton();
  const PoseModel m = make_pose_model(s, {});
  Eigen::MatrixXd X(10000, 3 * static_cast<Eigen::Index>(s.landmark_count()));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    X.row(i) = pose_vector(geometry::normalize_pose(sample_pose(s, m, static_cast<std::uint64_t>(i)), s.frame).first).transpose();
  const auto fit = fit_basis(X, s.primary_count(), s.secondary_count(), 3, std::nullopt, 0.95);
  // 57 coordinates, a rank-4 angle model pushed through the kinematics.
  EXPECT_LE(fit.basis.count(), 12u);
}

TEST(Synthdata, RigGeometry) {
  const Rig rig = build_rig({});
  ASSERT_EQ(rig.size(), 4u);
  for (const auto& c : rig) {
    EXPECT_NEAR(c.R.determinant(), 1.0, 1e-12);
    EXPECT_NO_THROW(c.validate());
  }
  RigSpec two;
  two.count = 2;
  two.arc_degrees = 60.0;
  two.height = 0.0;
  const Rig pair = build_rig(two);
  const double angle = std::acos(pair[0].R.row(2).dot(pair[1].R.row(2)));
  EXPECT_NEAR(angle, std::numbers::pi / 3.0, 1e-12);
  RigSpec one;
  one.count = 1;
  EXPECT_THROW(build_rig(one), Error);
}

TEST(Synthdata, SubjectCentroidProjectsInsideEveryCamera) {
  const SkeletonSpec s = default_skeleton();
  const PoseModel m = make_pose_model(s, {});
  const Rig rig = build_rig({});
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Pose3D p = sample_pose(s, m, seed);
    Vec3 c = Vec3::Zero();
    for (const auto& v : p.primary) c += v;
    for (const auto& v : p.secondary) c += v;
    c /= static_cast<double>(s.landmark_count());
    for (const auto& cam : rig) {
      const Vec2 z = geometry::project(cam, c);
      EXPECT_TRUE(z.x() >= 0 && z.y() >= 0 && z.x() < cam.width && z.y() < cam.height) << seed;
    }
  }
}

TEST(Synthdata, RenderPutsBrightestPixelAtTheProjectedLandmark) {
  const SkeletonSpec s = default_skeleton();
  CameraParams cam = build_rig({}).front();
  cam.K(0, 2) = cam.K(1, 2) = 32.0;  // the target lands on pixel (32, 32)
  RenderConfig rc;
  rc.background_noise = 0.0;
  rc.color_jitter = 0.0;
  const Rendered r = render(collapsed_pose(s, Vec3::Zero()), cam, s, rc, 1);
  int by = -1, bx = -1;
  float best = -1.0f;
  for (int y = 0; y < r.image.height; ++y)
    for (int x = 0; x < r.image.width; ++x) {
      float v = 0.0f;
      for (int c = 0; c < r.image.channels; ++c) v += r.image.at(c, y, x);
      if (v > best) best = v, by = y, bx = x;
    }
  EXPECT_EQ(bx, 32);
  EXPECT_EQ(by, 32);
}

TEST(Synthdata, BlobSizeIgnoresDepth) {
  const SkeletonSpec s = default_skeleton();
  const CameraParams cam = build_rig({}).front();
  RenderConfig rc;
  rc.background_noise = 0.0;
  rc.color_jitter = 0.0;
  // Moving along the ray through the target keeps the projection fixed.
  const Vec3 axis = cam.R.row(2).transpose();
  const Rendered near = render(collapsed_pose(s, -0.5 * axis), cam, s, rc, 3);
  const Rendered far = render(collapsed_pose(s, 0.5 * axis), cam, s, rc, 3);
  ASSERT_EQ(near.image.size(), far.image.size());
  double diff = 0.0;
  for (std::size_t i = 0; i < near.image.size(); ++i) diff = std::max(diff, static_cast<double>(std::abs(near.image.data[i] - far.image.data[i])));
  EXPECT_LT(diff, 1e-5);
}

TEST(Synthdata, LandmarkBehindCameraIsInvisible) {
  const SkeletonSpec s = default_skeleton();
  const CameraParams cam = build_rig({}).front();
  Pose3D p = collapsed_pose(s, Vec3::Zero());
  p.secondary[0] = cam.center() - cam.R.row(2).transpose();
  const Pose2D z = project_pose(p, cam);
  EXPECT_FALSE(z.secondary_visible[0]);
  EXPECT_TRUE(z.primary_visible[0]);
}

TEST(Synthdata, StoredTruthMatchesProjection) {
  GeneratorConfig g = small_generator();
  g.render.keypoint_noise_px = 1.0;
  const Dataset d = generate_dataset(g);
  ASSERT_EQ(d.frames.size(), 34u);
  for (const auto& f : d.frames) {
    ASSERT_TRUE(f.truth3d.has_value());
    for (const auto& v : f.views) {
      ASSERT_TRUE(v.truth.has_value());
      const Pose2D z = project_pose(*f.truth3d, d.rig[v.camera]);
      for (std::size_t k = 0; k < z.landmark_count(); ++k) EXPECT_LT((z.at(k) - v.truth->at(k)).norm(), 1e-9);
    }
  }
  EXPECT_EQ(d.select(FrameSplit::Train, true).size(), 6u);
  EXPECT_EQ(d.select(FrameSplit::Test, true).size(), 4u);
}

TEST(Synthdata, SplitCountsAndMembership) {
  GeneratorConfig g;
  g.train_frames = 1000;
  g.test_frames = 1;
  g.image_frames = 0;
  const Dataset d = generate_dataset(g);
  const auto train = d.select(FrameSplit::Train, false);
  std::vector<MultiviewFrame> frames;
  for (const auto* f : train) frames.push_back(*f);
  const DatasetSplit s = make_splits(frames, d.skeleton, d.rig, 0.1, 5);
  EXPECT_EQ(s.labeled_secondary.size(), 100u);
  EXPECT_EQ(s.labeled_primary.size(), 500u);
  EXPECT_EQ(s.unlabeled.size(), 900u);
  for (std::size_t i : s.labeled_secondary)
    EXPECT_TRUE(std::find(s.labeled_primary.begin(), s.labeled_primary.end(), i) != s.labeled_primary.end());
  const DatasetSplit again = make_splits(frames, d.skeleton, d.rig, 0.1, 5);
  EXPECT_EQ(again.labeled_secondary, s.labeled_secondary);
  const DatasetSplit full = make_splits(frames, d.skeleton, d.rig, 1.0, 5);
  EXPECT_TRUE(full.unlabeled.empty());
  EXPECT_THROW(make_splits(frames, d.skeleton, d.rig, 1e-4, 5), Error);
  EXPECT_THROW(make_splits(frames, d.skeleton, d.rig, 0.0, 5), Error);
}

TEST(Synthdata, SerializedUnlabeledFramesCarryNoPoses) {
  const Dataset d = generate_dataset(small_generator());
  const DatasetSplit s = make_splits(d.frames, d.skeleton, d.rig, 0.1, 3, 0.2);
  const auto dir = std::filesystem::temp_directory_path() / "seclm_split_io";
  std::filesystem::remove_all(dir);
  write_split(s, {0.1, 3}, dir);
  std::set<std::size_t> bare;
  for (std::size_t i : s.unlabeled)
    if (std::find(s.labeled_primary.begin(), s.labeled_primary.end(), i) == s.labeled_primary.end()) bare.insert(s.frames[i].id);
  ASSERT_FALSE(bare.empty());
  std::ifstream is(dir / "frames.jsonl");
  std::string line;
  std::size_t checked = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    if (!bare.count(j.at("frame").get<std::uint64_t>())) continue;
    EXPECT_FALSE(j.contains("pose2d"));
    EXPECT_FALSE(j.contains("pose3d"));
    ++checked;
  }
  EXPECT_EQ(checked, bare.size() * d.rig.size());
  SplitInfo info;
  const DatasetSplit back = load_split(dir, &info);
  EXPECT_EQ(back.labeled_secondary, s.labeled_secondary);
  EXPECT_EQ(info.seed, 3u);
  std::filesystem::remove_all(dir);
}

TEST(Synthdata, SameSeedGivesByteIdenticalFiles) {
  const auto root = std::filesystem::temp_directory_path() / "seclm_repro";
  std::filesystem::remove_all(root);
  write_dataset(generate_dataset(small_generator()), root / "a");
  write_dataset(generate_dataset(small_generator()), root / "b");
  const auto fa = dataset_files(root / "a"), fb = dataset_files(root / "b");
  ASSERT_EQ(fa.size(), fb.size());
  ASSERT_GT(fa.size(), 4u);
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa[i].filename(), fb[i].filename());
    EXPECT_EQ(slurp(fa[i]), slurp(fb[i])) << fa[i];
  }
  const Dataset back = load_dataset(root / "a");
  EXPECT_EQ(back.frames.size(), 34u);
  EXPECT_TRUE(back.frames.front().views.front().image.has_value());
  std::filesystem::remove(root / "a" / "rig.json");
  EXPECT_THROW(load_dataset(root / "a"), Error);
  std::filesystem::remove_all(root);
}
