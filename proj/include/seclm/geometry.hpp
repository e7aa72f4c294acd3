#pragma once

// Pinhole cameras, two-view DLT triangulation and body-frame normalization.
//
// Plain-double routines work on Eigen types; the `seclm::geometry::ad`
// variants build the same computations on an autodiff tape so gradients can
// flow from reprojection losses back into detections.

#include <Eigen/Dense>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seclm/autodiff.hpp"

namespace seclm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Calibrated pinhole camera. `R`, `t` map world to camera coordinates.
struct CameraParams {
  std::string name;
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0;
  int height = 0;

  Mat34 projection_matrix() const;
  Vec3 center() const { return -R.transpose() * t; }
  /// Throws Error(Precondition) when R is not a rotation or K is malformed.
  void validate() const;
};

using Rig = std::vector<CameraParams>;

/// Landmark coordinates split into primary (Z) and secondary (X) blocks.
struct Pose3D {
  std::vector<Vec3> primary;
  std::vector<Vec3> secondary;
  bool canonical = false;
};

struct Pose2D {
  std::vector<Vec2> primary;
  std::vector<Vec2> secondary;
  std::vector<bool> primary_visible;
  std::vector<bool> secondary_visible;

  static Pose2D all_visible(std::vector<Vec2> primary, std::vector<Vec2> secondary);
  std::size_t landmark_count() const { return primary.size() + secondary.size(); }
  /// Combined indexing: primaries first, then secondaries.
  const Vec2& at(std::size_t k) const;
  bool visible(std::size_t k) const;
};

/// x ↦ s·R·x + t with s > 0 and R ∈ SO(3).
struct SimilarityTransform {
  double s = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static SimilarityTransform identity() { return {}; }
  Vec3 apply(const Vec3& x) const { return s * (R * x) + t; }
  Vec3 invert(const Vec3& y) const { return R.transpose() * (y - t) / s; }
  SimilarityTransform inverse() const;
  /// (*this ∘ other)(x) = this->apply(other.apply(x)).
  SimilarityTransform compose(const SimilarityTransform& other) const;
  void validate() const;
};

/// Landmark indices (into the primary block) defining the body frame: the
/// spine limb runs origin → axis and becomes the unit +x axis; `plane`
/// fixes +y by Gram–Schmidt against the spine.
struct FrameSpec {
  std::size_t origin = 0;
  std::size_t axis = 1;
  std::size_t plane = 2;
};

namespace geometry {

inline constexpr double kMinDepth = 1e-9;
inline constexpr double kMinBaseline = 1e-9;
inline constexpr double kMaxConditionNumber = 1e8;
inline constexpr double kMinFrameArea = 1e-9;

Vec2 project(const CameraParams& cam, const Vec3& x);
/// Depth of `x` along the camera's optical axis.
double depth(const CameraParams& cam, const Vec3& x);

struct Triangulation {
  Vec3 point = Vec3::Zero();
  double condition_number = 0.0;
  /// Rays nearly parallel: condition number above kMaxConditionNumber.
  bool low_confidence = false;
};

/// Linear two-view triangulation minimising the algebraic DLT residual with
/// the homogeneous coordinate fixed to 1.
Triangulation triangulate_dlt(const Vec2& zi, const Vec2& zj, const CameraParams& cam_i, const CameraParams& cam_j);

/// Expresses `pose` in the body frame given by `frame` (indices into the
/// primary block) and returns the world → canonical transform.
std::pair<Pose3D, SimilarityTransform> normalize_pose(const Pose3D& pose, const FrameSpec& frame);

/// World → canonical transform alone.
SimilarityTransform canonical_transform(std::span<const Vec3> primary, const FrameSpec& frame);

Pose3D transform_pose(const Pose3D& pose, const SimilarityTransform& T);

/// Least-squares similarity aligning `source` onto `target` (Umeyama). Used
/// when a pose should be aligned to a template rather than to limb axes.
SimilarityTransform procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target);

// 2D analogue used by the 2D shared-representation study: origin at
// `frame.origin`, spine along +x with unit length (rotation + scale only).
struct Similarity2D {
  double s = 1.0;
  Eigen::Matrix2d R = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
  Vec2 apply(const Vec2& x) const { return s * (R * x) + t; }
  Vec2 invert(const Vec2& y) const { return R.transpose() * (y - t) / s; }
};
Similarity2D canonical_transform_2d(std::span<const Vec2> primary, const FrameSpec& frame);

nlohmann::json camera_to_json(const CameraParams& cam);
CameraParams camera_from_json(const nlohmann::json& j);
/// Rig file: JSON array of {name, K (row-major 9), R (row-major 9), t (3), width, height}.
void save_rig(const std::filesystem::path& path, const Rig& rig);
Rig load_rig(const std::filesystem::path& path);

}  // namespace geometry

namespace geometry::ad {

using seclm::ad::Var;

/// Projects an (n, 3) matrix of world points to an (n, 2) matrix of pixels.
Var project_points(const Var& points, const CameraParams& cam);

/// Differentiable DLT: z_i, z_j are pixel 2-vectors; result is a 3-vector.
Var triangulate(const Var& zi, const Var& zj, const CameraParams& cam_i, const CameraParams& cam_j);

/// Body frame of an (P, 3) primary matrix: canonical = scale·R·(x − origin).
struct CanonicalFrame {
  Var origin;    // (3)
  Var rotation;  // (3, 3), rows are the body axes in world coordinates
  Var length;    // (1) spine length; scale = 1 / length
};
CanonicalFrame canonical_frame(const Var& primary, const FrameSpec& frame);
/// (n, 3) world points → (n, 3) canonical points.
Var to_canonical(const CanonicalFrame& frame, const Var& points);
/// (n, 3) canonical points → (n, 3) world points.
Var from_canonical(const CanonicalFrame& frame, const Var& points);

}  // namespace geometry::ad

}  // namespace seclm
