#include "seclm/losses.hpp"

#include <cmath>

#include "seclm/detector.hpp"
#include "seclm/error.hpp"

namespace seclm {

using ad::Tensor;
using ad::Var;

double LossBreakdown::recompute_total(const LossWeights& w) const {
  const double unlabeled = w.reprojection * (reprojection_i + reprojection_j) - w.self_correlation * self_correlation +
                           w.cross_correlation * cross_correlation + triangulation;
  return unlabeled + lambda_l * (labeled_secondary + labeled_primary) + predictor_regression;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  reprojection_i += o.reprojection_i;
  reprojection_j += o.reprojection_j;
  self_correlation += o.self_correlation;
  cross_correlation += o.cross_correlation;
  triangulation += o.triangulation;
  labeled_secondary += o.labeled_secondary;
  labeled_primary += o.labeled_primary;
  predictor_regression += o.predictor_regression;
  total += o.total;
  labeled_items += o.labeled_items;
  unlabeled_pairs += o.unlabeled_pairs;
  skipped_pairs += o.skipped_pairs;
  zero_norm_warnings += o.zero_norm_warnings;
  return *this;
}

Var normalized_cross_correlation(const Var& a, const Var& b, bool* near_zero) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "normalized_cross_correlation: " + ad::to_string(a.shape()) + " vs " + ad::to_string(b.shape()));
  double na = 0.0, nb = 0.0;
  for (double v : a.value().values()) na += v * v;
  for (double v : b.value().values()) nb += v * v;
  const bool tiny = std::sqrt(na) < kNccEpsilon || std::sqrt(nb) < kNccEpsilon;
  if (near_zero) *near_zero = tiny;
  if (tiny) return a.tape().constant(Tensor::scalar(0.0));
  const Var denom = ad::add_scalar(ad::l2_norm(a) * ad::l2_norm(b), kNccEpsilon);
  return ad::div(ad::dot(a, b), denom);
}

double normalized_cross_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "normalized_cross_correlation: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (std::sqrt(aa) < kNccEpsilon || std::sqrt(bb) < kNccEpsilon) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb) + kNccEpsilon);
}

LabeledTerms labeled_loss_terms(const Var& keypoints, const Pose2D& truth) {
  const std::size_t P = truth.primary.size(), K = truth.landmark_count();
  if (keypoints.value().rank() != 2 || keypoints.value().rows() != K || keypoints.value().cols() != 2)
    throw Error(ErrorKind::Shape, "labeled loss: keypoints " + ad::to_string(keypoints.shape()) + " vs truth with " + std::to_string(K) + " landmarks");
  Tensor target({K, 2}), mask_p({K, 2}), mask_s({K, 2});
  for (std::size_t k = 0; k < K; ++k) {
    if (!truth.visible(k)) continue;
    target.at(k, 0) = truth.at(k).x();
    target.at(k, 1) = truth.at(k).y();
    Tensor& m = k < P ? mask_p : mask_s;
    m.at(k, 0) = m.at(k, 1) = 1.0;
  }
  ad::Tape& tape = keypoints.tape();
  const Var sq = ad::square(keypoints - tape.constant(std::move(target)));
  return {ad::sum(sq * tape.constant(std::move(mask_p))), ad::sum(sq * tape.constant(std::move(mask_s)))};
}

Var labeled_loss(const Var& keypoints, const Pose2D& truth) {
  const LabeledTerms t = labeled_loss_terms(keypoints, truth);
  return t.secondary + t.primary;
}

double labeled_loss(const Pose2D& det, const Pose2D& truth) {
  if (det.primary.size() != truth.primary.size() || det.secondary.size() != truth.secondary.size())
    throw Error(ErrorKind::Shape, "labeled loss: " + std::to_string(det.landmark_count()) + " detections vs " + std::to_string(truth.landmark_count()) + " truth landmarks");
  double s = 0.0;
  for (std::size_t k = 0; k < truth.landmark_count(); ++k)
    if (truth.visible(k)) s += (det.at(k) - truth.at(k)).squaredNorm();
  return s;
}

UnlabeledTerms unlabeled_loss_terms(const ViewInputs& vi, const ViewInputs& vj, const Var& secondary_world,
                                    std::size_t primary_count, bool contrastive) {
  if (!vi.camera || !vj.camera) throw Error(ErrorKind::Precondition, "unlabeled loss needs calibrated views");
  const std::size_t S = secondary_world.value().rows();
  ad::Tape& tape = secondary_world.tape();
  UnlabeledTerms t;
  std::vector<Var> samples_i, samples_j;
  auto reprojection = [&](const ViewInputs& v, std::vector<Var>& samples) {
    const Var proj = geometry::ad::project_points(secondary_world, *v.camera);
    const Var det = ad::reshape(ad::slice(v.keypoints, 2 * primary_count, 2 * S), {S, 2});
    if (contrastive)
      for (std::size_t k = 0; k < S; ++k) {
        bool oob = false;
        samples.push_back(sample_feature(v.features, v.grid_h, v.grid_w, v.stride, ad::row(proj, k), &oob));
        t.out_of_bounds += oob;
      }
    return ad::sum(ad::square(det - proj));
  };
  t.reprojection_i = reprojection(vi, samples_i);
  t.reprojection_j = reprojection(vj, samples_j);
  if (!contrastive) return t;

  auto ncc = [&](const Var& a, const Var& b) {
    bool tiny = false;
    Var c = normalized_cross_correlation(a, b, &tiny);
    t.zero_norm_warnings += tiny;
    return c;
  };
  std::vector<Var> self, cross;
  for (std::size_t k = 0; k < S; ++k) self.push_back(ncc(samples_i[k], samples_j[k]));
  for (const auto* samples : {&samples_i, &samples_j})
    for (std::size_t k = 0; k < S; ++k)
      for (std::size_t l = 0; l < S; ++l)
        if (k != l) cross.push_back(ncc((*samples)[k], (*samples)[l]));
  t.self_correlation = ad::sum(ad::concat(self));
  t.cross_correlation = S > 1 ? ad::scale(ad::sum(ad::concat(cross)), 0.5) : tape.constant(Tensor::scalar(0.0));
  return t;
}

Var combine_unlabeled(const UnlabeledTerms& t, const LossWeights& w) {
  Var total = ad::scale(t.reprojection_i + t.reprojection_j, w.reprojection);
  if (t.self_correlation.valid()) total = total - ad::scale(t.self_correlation, w.self_correlation);
  if (t.cross_correlation.valid()) total = total + ad::scale(t.cross_correlation, w.cross_correlation);
  return total;
}

GeometricPrediction predict_from_views(const Var& kp_i, const Var& kp_j, const CameraParams& cam_i, const CameraParams& cam_j,
                                       const FrameSpec& frame, const PredictorConfig& predictor,
                                       const ad::BoundParameters& params, bool stop_primary_gradient) {
  const std::size_t P = predictor.primary_count, S = predictor.secondary_count;
  const Tensor& vi = kp_i.value();
  const Tensor& vj = kp_j.value();
  if (vi.rank() != 2 || vi.rows() != P + S || vj.shape() != vi.shape())
    throw Error(ErrorKind::Shape, "predict_from_views: keypoints " + ad::to_string(vi.shape()) + " and " + ad::to_string(vj.shape()) +
                                      " do not hold " + std::to_string(P + S) + " landmarks");
  GeometricPrediction out;
  const Var si = stop_primary_gradient ? ad::stop_gradient(kp_i) : kp_i;
  const Var sj = stop_primary_gradient ? ad::stop_gradient(kp_j) : kp_j;
  std::vector<Var> points;
  points.reserve(P);
  for (std::size_t k = 0; k < P; ++k) {
    const auto tri = geometry::triangulate_dlt(Vec2(vi.at(k, 0), vi.at(k, 1)), Vec2(vj.at(k, 0), vj.at(k, 1)), cam_i, cam_j);
    if (tri.low_confidence) {
      out.skip_reason = "low-confidence triangulation";
      return out;
    }
    points.push_back(geometry::ad::triangulate(ad::row(si, k), ad::row(sj, k), cam_i, cam_j));
  }
  out.primary_world = ad::stack_rows(points);
  try {
    const auto cf = geometry::ad::canonical_frame(out.primary_world, frame);
    const Var canon = geometry::ad::to_canonical(cf, out.primary_world);
    const Var pred = predictor_forward(predictor, params, ad::reshape(canon, {3 * P}));
    out.secondary_world = geometry::ad::from_canonical(cf, ad::reshape(pred, {S, 3}));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Degenerate) throw;
    out.skip_reason = "degenerate body frame";
    out.primary_world = Var();
  }
  return out;
}

Var triangulation_baseline_loss(const Var& kp_i, const Var& kp_j, const CameraParams& cam_i, const CameraParams& cam_j,
                                std::size_t primary_count, std::size_t* skipped) {
  const Tensor& vi = kp_i.value();
  const Tensor& vj = kp_j.value();
  if (vi.rank() != 2 || vi.cols() != 2 || vj.shape() != vi.shape() || vi.rows() < primary_count)
    throw Error(ErrorKind::Shape, "triangulation baseline: keypoints " + ad::to_string(vi.shape()) + " and " + ad::to_string(vj.shape()));
  std::size_t skip = 0;
  std::vector<Var> terms;
  for (std::size_t k = primary_count; k < vi.rows(); ++k) {
    const auto tri = geometry::triangulate_dlt(Vec2(vi.at(k, 0), vi.at(k, 1)), Vec2(vj.at(k, 0), vj.at(k, 1)), cam_i, cam_j);
    if (tri.low_confidence || geometry::depth(cam_i, tri.point) <= geometry::kMinDepth || geometry::depth(cam_j, tri.point) <= geometry::kMinDepth) {
      ++skip;
      continue;
    }
    const Var zi = ad::row(kp_i, k), zj = ad::row(kp_j, k);
    const Var X = ad::reshape(geometry::ad::triangulate(zi, zj, cam_i, cam_j), {1, 3});
    terms.push_back(ad::sum(ad::square(zi - ad::reshape(geometry::ad::project_points(X, cam_i), {2}))));
    terms.push_back(ad::sum(ad::square(zj - ad::reshape(geometry::ad::project_points(X, cam_j), {2}))));
  }
  if (skipped) *skipped = skip;
  if (terms.empty()) return kp_i.tape().constant(Tensor::scalar(0.0));
  return ad::sum(ad::concat(terms));
}

Var total_objective(ad::Tape& tape, const std::vector<Var>& labeled, const std::vector<Var>& unlabeled, double lambda_l) {
  if (!(lambda_l >= 0.0)) throw Error(ErrorKind::Precondition, "lambda_L must be non-negative");
  Var total = tape.constant(Tensor::scalar(0.0));
  for (const Var& u : unlabeled) total = total + u;
  if (!labeled.empty()) {
    Var l = tape.constant(Tensor::scalar(0.0));
    for (const Var& v : labeled) l = l + v;
    total = total + ad::scale(l, lambda_l);
  }
  return total;
}

}  // namespace seclm
