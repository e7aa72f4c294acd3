#pragma once

// Linear joint space over concatenated [primary; secondary] pose vectors:
// x ≈ b̄ + Σ α_i b_i. Secondaries are reconstructed from (masked) primaries by
// fitting α on the primary rows only.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seclm/checkpoint.hpp"
#include "seclm/geometry.hpp"
#include "seclm/synthdata.hpp"

namespace seclm {

struct PoseBasis {
  Eigen::VectorXd mean;             // length dim·(P+S)
  Eigen::MatrixXd bases;            // dim·(P+S) × B, orthonormal columns
  Eigen::VectorXd explained;        // variance along each basis vector
  double total_variance = 0.0;
  std::size_t primary_count = 0;
  std::size_t secondary_count = 0;
  int dim = 3;                      // 2 or 3

  std::size_t count() const { return static_cast<std::size_t>(bases.cols()); }
  std::size_t primary_rows() const { return dim * primary_count; }
  std::size_t rows() const { return dim * (primary_count + secondary_count); }
  void validate() const;
};

/// Flattened [Z; X] pose vectors.
Eigen::VectorXd pose_vector(const Pose3D& pose);
Eigen::VectorXd pose_vector(const Pose2D& pose);

struct FitResult {
  PoseBasis basis;
  std::vector<std::string> warnings;
};

/// PCA over the rows of `samples` (one pose vector per row). `count` nullopt
/// picks the smallest B explaining at least `variance_target` of the
/// variance. Directions with (numerically) zero variance are dropped with a
/// warning. Sign convention: the largest-magnitude entry of every basis
/// vector is positive.
FitResult fit_basis(const Eigen::MatrixXd& samples, std::size_t primary_count, std::size_t secondary_count, int dim,
                    std::optional<std::size_t> count = std::nullopt, double variance_target = 0.95);

/// Boolean mask over the P primaries; at least three must be included.
struct PrimaryConfig {
  std::string id;
  std::vector<bool> include;

  std::size_t included() const;
  void validate(std::size_t primary_count) const;
};

/// The seven configurations of the masking study on the default skeleton:
/// full, no wrists, no left wrist+shoulder, no right wrist+shoulder, no
/// knees/feet, no head/nose, no tail.
std::vector<PrimaryConfig> default_primary_configs(const SkeletonSpec& skeleton);

struct Reconstruction {
  Eigen::VectorXd secondary;     // dim·S
  Eigen::VectorXd alpha;         // B coefficients
  std::optional<double> error;   // ‖secondary − truth‖² when truth is supplied
  bool ridge_fallback = false;
};

/// `primary` holds all dim·P primary coordinates; rows of excluded landmarks
/// are ignored. Rank-deficient masked systems use ridge λ = 1e-8·trace(AᵀA).
Reconstruction reconstruct_secondary(const PoseBasis& basis, const Eigen::VectorXd& primary, const PrimaryConfig& config,
                                     const std::optional<Eigen::VectorXd>& truth_secondary = std::nullopt);

Checkpoint basis_to_checkpoint(const PoseBasis& basis, const std::string& prefix = "subspace");
PoseBasis basis_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "subspace");

// --- 2D vs 3D study -------------------------------------------------------

struct SubspaceStudyConfig {
  std::optional<std::size_t> bases;  // default: 95% variance of the 3D fit
  double variance_target = 0.95;
  std::size_t view_i = 0, view_j = 1;  // views triangulated in 3D mode
  bool run_2d = true;
  bool run_3d = true;
};

/// Per config, mode and secondary landmark: errors over all test frames (and
/// all views for pixel errors). Canonical errors are Euclidean distances in
/// the mode's own body frame; pixel errors are distances in the images.
struct SubspaceRow {
  std::string config;
  std::string mode;  // "2d" or "3d"
  std::size_t landmark = 0;  // secondary index
  double mean_px = 0.0, median_px = 0.0;
  double mean_canonical = 0.0, median_canonical = 0.0;
};

struct SubspaceSummary {
  std::string config;
  double mean_px_2d = 0.0, mean_px_3d = 0.0;
  double mean_canonical_2d = 0.0, mean_canonical_3d = 0.0;
  double ratio_px() const { return mean_px_3d / mean_px_2d; }
};

struct SubspaceReport {
  std::size_t bases = 0;
  std::size_t train_poses_3d = 0, train_poses_2d = 0, test_frames = 0;
  std::vector<SubspaceRow> rows;
  std::vector<SubspaceSummary> summary;
  std::vector<std::string> warnings;
};

/// Frames must carry 2D truth in every view. 3D mode triangulates views
/// `view_i`, `view_j`; 2D mode pools the similarity-normalized poses of every
/// view into one basis.
SubspaceReport compare_2d_3d(const std::vector<const MultiviewFrame*>& train, const std::vector<const MultiviewFrame*>& test,
                             const Rig& rig, const SkeletonSpec& skeleton, const std::vector<PrimaryConfig>& configs,
                             const SubspaceStudyConfig& study = {});

}  // namespace seclm
