#pragma once

// Synthetic multiview capture: an articulated body driven by a low-rank
// Gaussian over joint angles, a ring of calibrated cameras, a blob renderer
// and the labeled / unlabeled dataset split.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seclm/geometry.hpp"
#include "seclm/image.hpp"

namespace seclm {

struct SkeletonSpec {
  std::vector<std::string> names;  // primaries first, then secondaries
  std::vector<int> parents;        // -1 marks the root
  std::vector<Vec3> offsets;       // rest-pose bone vector in the parent frame
  std::vector<bool> is_primary;
  FrameSpec frame;                 // indices into the primary block
  std::pair<std::size_t, std::size_t> reference_pair{1, 2};  // PCKh head / neck, primary indices

  std::size_t landmark_count() const { return names.size(); }
  std::size_t primary_count() const;
  std::size_t secondary_count() const;
  /// Primary index or secondary index of a landmark within its own block.
  std::size_t block_index(std::size_t landmark) const;
  std::size_t index_of(const std::string& name) const;
  std::size_t primary_index(const std::string& name) const;
  std::size_t secondary_index(const std::string& name) const;
  double bone_length(std::size_t landmark) const { return offsets[landmark].norm(); }
  /// Acyclic single-rooted tree, primaries before secondaries, frame triple primary.
  void validate() const;
};

/// 13 primaries (nose, head, neck, shoulders, hands, hip, knees, feet, tail)
/// and 6 secondaries (elbows, ears, spine midpoint, tail midpoint).
SkeletonSpec default_skeleton();

/// Joint angles = mean + basis·g + residual·ε (g, ε standard normal), three
/// angles per landmark, clamped to ±clamp. The root additionally gets a
/// uniform heading in [0, heading_range) and a uniform planar offset.
struct PoseModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;
  double residual_sigma = 0.0;
  double clamp = 1.5;
  double heading_range = 0.0;
  double translation_range = 0.0;

  std::size_t angle_count() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t rank() const { return static_cast<std::size_t>(basis.cols()); }
};

struct PoseModelConfig {
  std::size_t rank = 4;
  double amplitude = 0.45;
  double residual_sigma = 0.04;
  double heading_range = 6.283185307179586;
  double translation_range = 0.15;
  std::uint64_t seed = 1234;
};

PoseModel make_pose_model(const SkeletonSpec& spec, const PoseModelConfig& config);

/// Joint angles for one sample; exposed so tests can check the kinematics.
Pose3D forward_kinematics(const SkeletonSpec& spec, const Eigen::VectorXd& angles, double heading, const Vec3& translation);

Pose3D sample_pose(const SkeletonSpec& spec, const PoseModel& model, std::uint64_t seed);

struct RigSpec {
  std::size_t count = 4;
  double radius = 4.5;   // 3 × body scale
  double height = 1.0;
  int image_size = 64;
  double focal = 135.0;
  double arc_degrees = 360.0;  // < 360: cameras span the arc centred on +x
  Vec3 target = Vec3::Zero();
};

Rig build_rig(const RigSpec& spec);

struct RenderConfig {
  double blob_sigma = 1.5;
  double secondary_amplitude = 0.6;
  /// Secondaries share one dull colour; this is how far their signatures spread.
  double secondary_color_spread = 0.05;
  double color_jitter = 0.05;
  double bone_intensity = 0.15;
  double bone_width = 0.6;
  double background = 0.08;
  double background_noise = 0.02;
  double keypoint_noise_px = 0.0;  // noise on the "detected" 2D channel only
};

struct Rendered {
  Image image;
  Pose2D truth;     // exact projection
  Pose2D detected;  // truth + keypoint_noise_px
};

Rendered render(const Pose3D& pose, const CameraParams& cam, const SkeletonSpec& spec, const RenderConfig& config,
                std::uint64_t seed);

/// Exact projection with visibility (in front of the camera and inside the image).
Pose2D project_pose(const Pose3D& pose, const CameraParams& cam);

enum class FrameSplit { Train, Test };

struct View {
  std::size_t camera = 0;
  std::optional<Image> image;
  std::optional<Pose2D> truth;
  std::string image_path;  // relative path inside a dataset directory
};

struct MultiviewFrame {
  std::uint64_t id = 0;
  FrameSplit split = FrameSplit::Train;
  std::optional<Pose3D> truth3d;
  std::vector<View> views;

  bool has_images() const;
};

struct GeneratorConfig {
  std::uint64_t seed = 7;
  std::size_t train_frames = 5000;
  std::size_t test_frames = 200;
  /// Images are rendered for the first `image_frames` training frames and
  /// for every test frame; the rest carry poses only.
  std::size_t image_frames = 500;
  RigSpec rig;
  RenderConfig render;
  PoseModelConfig pose_model;
};

struct Dataset {
  SkeletonSpec skeleton;
  Rig rig;
  std::vector<MultiviewFrame> frames;
  GeneratorConfig config;

  std::vector<const MultiviewFrame*> select(FrameSplit split, bool with_images) const;
};

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

Dataset generate_dataset(const GeneratorConfig& config);

/// D_Z (primary labels), D_X (secondary labels, ⊆ D_Z) and D_X^U (no
/// secondary labels). Frames hold only the annotations their membership grants.
struct DatasetSplit {
  SkeletonSpec skeleton;
  Rig rig;
  std::vector<MultiviewFrame> frames;
  std::vector<std::size_t> labeled_primary;    // D_Z
  std::vector<std::size_t> labeled_secondary;  // D_X
  std::vector<std::size_t> unlabeled;          // D_X^U
};

/// |D_X| = round(label_ratio·N); |D_Z| = round(max(label_ratio, primary_ratio)·N).
/// The default primary ratio of 0.5 keeps D_Z an order of magnitude larger
/// than D_X at the low label ratios studied.
DatasetSplit make_splits(const std::vector<MultiviewFrame>& frames, const SkeletonSpec& skeleton, const Rig& rig,
                         double label_ratio, std::uint64_t seed, std::optional<double> primary_ratio = std::nullopt);

}  // namespace seclm
