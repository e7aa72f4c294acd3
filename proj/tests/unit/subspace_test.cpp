#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "seclm/error.hpp"
#include "seclm/subspace.hpp"

using namespace seclm;

namespace {

// Samples x = μ + W·c with W (D × r) random and c standard normal.
Eigen::MatrixXd low_rank_samples(std::size_t n, std::size_t D, std::size_t r, std::mt19937_64& rng, Eigen::MatrixXd* W_out = nullptr) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd W(D, r);
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = g(rng);
  Eigen::VectorXd mu(D);
  for (Eigen::Index i = 0; i < mu.size(); ++i) mu[i] = g(rng);
  Eigen::MatrixXd X(n, D);
  for (std::size_t s = 0; s < n; ++s) {
    Eigen::VectorXd c(r);
    for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = g(rng);
    X.row(static_cast<Eigen::Index>(s)) = (mu + W * c).transpose();
  }
  if (W_out) *W_out = W;
  return X;
}

PrimaryConfig all_of(std::size_t P) { return {"full", std::vector<bool>(P, true)}; }

}  // namespace

TEST(Subspace, ExactLowRankRecoveryFromPrimaries) {
  std::mt19937_64 rng(21);
  const std::size_t P = 5, S = 3, r = 4;
  const Eigen::MatrixXd X = low_rank_samples(200, 3 * (P + S), r, rng);
  const auto fit = fit_basis(X, P, S, 3, r);
  EXPECT_TRUE(fit.warnings.empty());
  ASSERT_EQ(fit.basis.count(), r);
  fit.basis.validate();
  EXPECT_NEAR(fit.basis.explained.sum(), fit.basis.total_variance, 1e-9 * fit.basis.total_variance);
  for (Eigen::Index s = 0; s < 10; ++s) {
    const Eigen::VectorXd x = X.row(s).transpose();
    const auto rec = reconstruct_secondary(fit.basis, x.head(3 * P), all_of(P), Eigen::VectorXd(x.tail(3 * S)));
    EXPECT_FALSE(rec.ridge_fallback);
    ASSERT_TRUE(rec.error.has_value());
    EXPECT_LT(*rec.error, 1e-16 * x.squaredNorm() + 1e-18);
  }
  // Masking one primary keeps 12 ≥ r rows, so recovery stays exact.
  PrimaryConfig masked = all_of(P);
  masked.include[4] = false;
  const Eigen::VectorXd x = X.row(0).transpose();
  EXPECT_LT(*reconstruct_secondary(fit.basis, x.head(3 * P), masked, Eigen::VectorXd(x.tail(3 * S))).error, 1e-16 * x.squaredNorm());
}

TEST(Subspace, VarianceTargetPicksSmallestCount) {
  std::mt19937_64 rng(22);
  const Eigen::MatrixXd X = low_rank_samples(300, 12, 3, rng);
  const auto fit = fit_basis(X, 2, 2, 3, std::nullopt, 1.0);
  EXPECT_EQ(fit.basis.count(), 3u);
  const auto fit95 = fit_basis(X, 2, 2, 3, std::nullopt, 0.95);
  const double kept = fit95.basis.explained.sum() / fit95.basis.total_variance;
  EXPECT_GE(kept, 0.95);
  const double without_last = (fit95.basis.explained.sum() - fit95.basis.explained.tail(1)[0]) / fit95.basis.total_variance;
  EXPECT_LT(without_last, 0.95);
}

TEST(Subspace, SignConventionLargestEntryPositive) {
  std::mt19937_64 rng(23);
  const auto fit = fit_basis(low_rank_samples(100, 12, 4, rng), 2, 2, 3, 4);
  for (Eigen::Index c = 0; c < fit.basis.bases.cols(); ++c) {
    Eigen::Index arg = 0;
    fit.basis.bases.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(fit.basis.bases(arg, c), 0.0);
  }
  // Negating the data flips no signs after the convention is applied.
  std::mt19937_64 rng2(23);
  const auto neg = fit_basis(-low_rank_samples(100, 12, 4, rng2), 2, 2, 3, 4);
  EXPECT_LT((neg.basis.bases - fit.basis.bases).norm(), 1e-9);
}

TEST(Subspace, RankDeficientMaskFallsBackToRidge) {
  std::mt19937_64 rng(24);
  const std::size_t P = 5, S = 3;
  const Eigen::MatrixXd X = low_rank_samples(200, 3 * (P + S), 12, rng);
  const auto fit = fit_basis(X, P, S, 3, 12);
  PrimaryConfig three{"three", {true, true, true, false, false}};
  const Eigen::VectorXd x = X.row(0).transpose();
  const auto rec = reconstruct_secondary(fit.basis, x.head(3 * P), three);
  EXPECT_TRUE(rec.ridge_fallback);
  EXPECT_TRUE(rec.secondary.allFinite());
  EXPECT_FALSE(rec.error.has_value());
}

TEST(Subspace, ZeroVarianceAndRankWarnings) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 12);
  const auto fit = fit_basis(X, 2, 2, 3);
  EXPECT_EQ(fit.basis.count(), 0u);
  EXPECT_FALSE(fit.warnings.empty());
  std::mt19937_64 rng(25);
  const auto clipped = fit_basis(low_rank_samples(50, 12, 2, rng), 2, 2, 3, 5);
  EXPECT_EQ(clipped.basis.count(), 2u);
  EXPECT_FALSE(clipped.warnings.empty());
}

TEST(Subspace, ConfigAndShapeErrors) {
  std::mt19937_64 rng(26);
  const auto fit = fit_basis(low_rank_samples(50, 12, 2, rng), 2, 2, 3, 2);
  EXPECT_THROW(fit_basis(Eigen::MatrixXd::Zero(10, 11), 2, 2, 3), Error);
  EXPECT_THROW(fit_basis(Eigen::MatrixXd::Zero(3, 12), 2, 2, 3, 4), Error);
  const PrimaryConfig too_few{"two", {true, true}};
  try {
    reconstruct_secondary(fit.basis, Eigen::VectorXd::Zero(6), too_few);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Subspace, CheckpointRoundTrip) {
  std::mt19937_64 rng(27);
  const auto fit = fit_basis(low_rank_samples(50, 12, 3, rng), 2, 2, 3, 3);
  const PoseBasis back = basis_from_checkpoint(basis_to_checkpoint(fit.basis));
  EXPECT_EQ(back.primary_count, 2u);
  EXPECT_EQ(back.dim, 3);
  EXPECT_EQ((back.bases - fit.basis.bases).norm(), 0.0);
  EXPECT_EQ((back.mean - fit.basis.mean).norm(), 0.0);
  EXPECT_THROW(basis_from_checkpoint(Checkpoint{}), Error);
}

TEST(Subspace, DefaultConfigsMaskTheNamedPrimaries) {
  const SkeletonSpec sk = default_skeleton();
  const auto configs = default_primary_configs(sk);
  ASSERT_EQ(configs.size(), 7u);
  EXPECT_EQ(configs[0].included(), sk.primary_count());
  EXPECT_EQ(configs[4].included(), sk.primary_count() - 4);
  for (const auto& c : configs) EXPECT_NO_THROW(c.validate(sk.primary_count()));
}

TEST(Subspace, StudyOnSmallDataset) {
  GeneratorConfig g;
  g.train_frames = 120;
  g.test_frames = 8;
  g.image_frames = 0;
  const Dataset d = generate_dataset(g);
  const auto configs = default_primary_configs(d.skeleton);
  SubspaceStudyConfig study;
  study.bases = 6;
  const auto report = compare_2d_3d(d.select(FrameSplit::Train, false), d.select(FrameSplit::Test, false), d.rig, d.skeleton,
                                    configs, study);
  EXPECT_EQ(report.bases, 6u);
  ASSERT_EQ(report.summary.size(), configs.size());
  EXPECT_EQ(report.rows.size(), configs.size() * 2 * d.skeleton.secondary_count());
  for (const auto& s : report.summary) {
    EXPECT_TRUE(std::isfinite(s.mean_px_2d) && s.mean_px_2d > 0.0);
    EXPECT_TRUE(std::isfinite(s.mean_px_3d) && s.mean_px_3d > 0.0);
  }
  for (const auto& r : report.rows) EXPECT_LE(r.median_px, 10.0 * r.mean_px + 1e-12);
}
