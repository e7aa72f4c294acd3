#pragma once

// Labeled loss L_L, the two-view unlabeled loss L_U (reprojection plus the
// contrastive feature terms), the triangulation-only baseline term and the
// combined objective L = Σ L_U + λ_L Σ L_L.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "seclm/autodiff.hpp"
#include "seclm/geometry.hpp"
#include "seclm/predictor.hpp"

namespace seclm {

inline constexpr double kDefaultLambdaL = 10.0;
inline constexpr double kNccEpsilon = 1e-12;

struct LossWeights {
  double reprojection = 1.0;
  double self_correlation = 1.0;
  double cross_correlation = 1.0;
};

/// Scalar summary of one evaluation of the objective (sums over the batch).
struct LossBreakdown {
  double reprojection_i = 0.0;
  double reprojection_j = 0.0;
  double self_correlation = 0.0;   // enters the loss negated
  double cross_correlation = 0.0;
  double triangulation = 0.0;      // L_U^t term, when that mode is active
  double labeled_secondary = 0.0;
  double labeled_primary = 0.0;
  double predictor_regression = 0.0;
  double total = 0.0;
  double lambda_l = kDefaultLambdaL;
  std::size_t labeled_items = 0;
  std::size_t unlabeled_pairs = 0;
  std::size_t skipped_pairs = 0;
  std::size_t zero_norm_warnings = 0;

  /// Σ unlabeled terms (with weights) + λ_L·Σ labeled terms + regression.
  double recompute_total(const LossWeights& w = {}) const;
  LossBreakdown& operator+=(const LossBreakdown& other);
};

/// dot(a, b) / (‖a‖·‖b‖ + ε). Sets `*near_zero` when either norm is below ε.
ad::Var normalized_cross_correlation(const ad::Var& a, const ad::Var& b, bool* near_zero = nullptr);
double normalized_cross_correlation(std::span<const double> a, std::span<const double> b);

/// Squared pixel error of (P+S, 2) keypoints against a truth pose, split into
/// the primary and secondary sums. Invisible truth landmarks contribute zero.
struct LabeledTerms {
  ad::Var primary;
  ad::Var secondary;
};
LabeledTerms labeled_loss_terms(const ad::Var& keypoints, const Pose2D& truth);
ad::Var labeled_loss(const ad::Var& keypoints, const Pose2D& truth);
double labeled_loss(const Pose2D& detections, const Pose2D& truth);

/// One view's detector outputs as seen by the unlabeled loss.
struct ViewInputs {
  ad::Var keypoints;  // (P+S, 2)
  ad::Var features;   // (h·w, n)
  std::size_t grid_h = 0, grid_w = 0;
  int stride = 4;
  const CameraParams* camera = nullptr;
};

struct UnlabeledTerms {
  ad::Var reprojection_i;
  ad::Var reprojection_j;
  ad::Var self_correlation;
  ad::Var cross_correlation;  // within-view term, averaged over both views
  std::size_t zero_norm_warnings = 0;
  std::size_t out_of_bounds = 0;
};

/// `secondary_world` holds the S predicted world points X_k as an (S, 3) matrix.
/// Without `contrastive` the correlation terms are left unset.
UnlabeledTerms unlabeled_loss_terms(const ViewInputs& vi, const ViewInputs& vj, const ad::Var& secondary_world,
                                    std::size_t primary_count, bool contrastive);
/// w_r·(reproj_i + reproj_j) − w_s·self + w_c·cross.
ad::Var combine_unlabeled(const UnlabeledTerms& terms, const LossWeights& weights);

/// Triangulates the detected primaries of views i and j, expresses them in
/// the body frame, runs the predictor and maps the secondaries back to the
/// world. `skip_reason` is set (and the result empty) for low-confidence
/// triangulation or a degenerate body frame.
struct GeometricPrediction {
  ad::Var secondary_world;  // (S, 3)
  ad::Var primary_world;    // (P, 3)
  std::optional<std::string> skip_reason;
};
GeometricPrediction predict_from_views(const ad::Var& keypoints_i, const ad::Var& keypoints_j, const CameraParams& cam_i,
                                       const CameraParams& cam_j, const FrameSpec& frame, const PredictorConfig& predictor,
                                       const ad::BoundParameters& params, bool stop_primary_gradient = false);

/// Baseline term: triangulates the detected secondaries of both
/// views directly and penalizes their squared reprojection error. Landmarks
/// with low-confidence triangulation are skipped and counted.
ad::Var triangulation_baseline_loss(const ad::Var& keypoints_i, const ad::Var& keypoints_j, const CameraParams& cam_i,
                                    const CameraParams& cam_j, std::size_t primary_count, std::size_t* skipped = nullptr);

/// L = Σ unlabeled + λ_L·Σ labeled on one tape. λ_L must be non-negative.
ad::Var total_objective(ad::Tape& tape, const std::vector<ad::Var>& labeled, const std::vector<ad::Var>& unlabeled,
                        double lambda_l = kDefaultLambdaL);

}  // namespace seclm
