#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "seclm/baselines.hpp"
#include "seclm/error.hpp"

using namespace seclm;

namespace {

Eigen::MatrixXd low_rank(Eigen::Index rows, Eigen::Index cols, Eigen::Index r, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd A(rows, r), B(r, cols);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = g(rng);
  return A * B;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Numerical;
}

}  // namespace

TEST(Als, RecoversExactLowRankMatrixWithMissingEntries) {
  std::mt19937_64 rng(61);
  const Eigen::MatrixXd truth = low_rank(60, 24, 3, rng);
  CompletionMatrix M{truth, Eigen::MatrixXd::Ones(60, 24)};
  std::bernoulli_distribution miss(0.3);
  for (Eigen::Index i = 0; i < M.mask.size(); ++i)
    if (miss(rng)) {
      M.mask.data()[i] = 0.0;
      M.values.data()[i] = 1e3;  // must be ignored
    }
  AlsConfig c;
  c.rank = 3;
  c.lambda = 1e-12;
  c.iterations = 500;
  const auto r = als_complete(M, c);
  EXPECT_FALSE(r.diverged);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    if (M.mask.data()[i] == 1.0) EXPECT_EQ(r.completed.data()[i], truth.data()[i]);
    worst = std::max(worst, std::abs(r.completed.data()[i] - truth.data()[i]));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Als, ObjectiveIsMonotoneNonIncreasing) {
  std::mt19937_64 rng(62);
  Eigen::MatrixXd X = low_rank(30, 12, 4, rng);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] += noise(rng);
  CompletionMatrix M{X, Eigen::MatrixXd::Ones(30, 12)};
  for (Eigen::Index i = 0; i < 30; ++i) M.mask(i, i % 12) = 0.0;
  AlsConfig c;
  c.rank = 2;
  c.lambda = 0.1;
  c.iterations = 30;
  const auto r = als_complete(M, c);
  ASSERT_GE(r.objective.size(), 2u);
  for (std::size_t k = 1; k < r.objective.size(); ++k) EXPECT_LE(r.objective[k], r.objective[k - 1] * (1 + 1e-12) + 1e-12);
  EXPECT_NEAR(r.objective.back(), als_objective(M, r.U, r.W, c), 1e-9 * r.objective.back());
}

TEST(Als, WeightedLambdaEqualsPlainForUniformCounts) {
  std::mt19937_64 rng(63);
  const Eigen::MatrixXd X = low_rank(20, 10, 3, rng);
  // Circulant mask: every row misses 2 entries, every column misses 4.
  CompletionMatrix M{X, Eigen::MatrixXd::Ones(20, 10)};
  for (Eigen::Index i = 0; i < 20; ++i) {
    M.mask(i, i % 10) = 0.0;
    M.mask(i, (i + 5) % 10) = 0.0;
  }
  AlsConfig plain;
  plain.rank = 3;
  plain.lambda = 0.05;
  plain.iterations = 20;
  AlsConfig weighted = plain;
  weighted.weighted = true;
  const auto a = als_complete(M, plain), b = als_complete(M, weighted);
  EXPECT_LE((a.completed - b.completed).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Als, ConfigAndDataErrors) {
  CompletionMatrix M{Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(4, 3)};
  AlsConfig c;
  c.rank = 0;
  EXPECT_EQ(kind_of([&] { als_complete(M, c); }), ErrorKind::Config);
  c.rank = 4;
  EXPECT_EQ(kind_of([&] { als_complete(M, c); }), ErrorKind::Config);
  c.rank = 2;
  CompletionMatrix bad{Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(3, 3)};
  EXPECT_EQ(kind_of([&] { als_complete(bad, c); }), ErrorKind::Shape);
  M.mask.row(1).setZero();
  EXPECT_EQ(kind_of([&] { als_complete(M, c); }), ErrorKind::Data);
}

TEST(NearestNeighbour, CompletesQueryFromCloseRows) {
  std::mt19937_64 rng(64);
  const Eigen::MatrixXd X = low_rank(200, 10, 2, rng);
  AlsConfig c;
  c.rank = 2;
  c.lambda = 1e-10;
  c.iterations = 300;
  const Eigen::VectorXd q = X.row(7).transpose();
  Eigen::MatrixXd labeled(199, 10);
  labeled << X.topRows(7), X.bottomRows(192);
  const auto r = nearest_neighbor_complete(labeled, 6, q.head(6), c, 16);
  EXPECT_LE((r.secondary - q.tail(4)).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_GT(r.nn_distance, 0.0);
  EXPECT_NEAR(r.nn_distance, (labeled.row(static_cast<Eigen::Index>(r.nn_index)).head(6).transpose() - q.head(6)).norm(), 1e-12);
  // Rank above the neighbour count is clamped instead of failing.
  c.rank = 8;
  EXPECT_NO_THROW(nearest_neighbor_complete(labeled, 6, q.head(6), c, 4));
}

TEST(Vae, KlClosedForm) {
  EXPECT_DOUBLE_EQ(gaussian_kl(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), 0.0);
  Eigen::VectorXd mu(2), lv(2);
  mu << 1.0, -2.0;
  lv << 0.0, std::log(4.0);
  // ½Σ(μ² + σ² − 1 − log σ²)
  const double expect = 0.5 * ((1.0 + 1.0 - 1.0 - 0.0) + (4.0 + 4.0 - 1.0 - std::log(4.0)));
  EXPECT_NEAR(gaussian_kl(mu, lv), expect, 1e-14);
  ad::Tape t;
  EXPECT_NEAR(gaussian_kl(t.leaf(ad::Tensor::vector({1.0, -2.0})), t.leaf(ad::Tensor::vector({0.0, std::log(4.0)}))).item(), expect, 1e-14);
}

TEST(Vae, TrainingReducesLossAndImputesFinite) {
  std::mt19937_64 rng(65);
  const Eigen::MatrixXd X = low_rank(300, 9, 2, rng);
  VaeConfig c;
  c.steps = 400;
  c.hidden = 16;
  c.latent = 3;
  const Vae vae = Vae::train(X, 6, c);
  ASSERT_TRUE(vae.trained());
  const auto& h = vae.loss_history();
  ASSERT_GE(h.size(), 100u);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += h[i];
    tail += h[h.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
  const Eigen::VectorXd s = vae.impute(X.row(0).head(6).transpose());
  EXPECT_EQ(s.size(), 3);
  EXPECT_TRUE(s.allFinite());
  EXPECT_TRUE(vae.reconstruct(X.row(0).transpose()).allFinite());
  const Vae again = Vae::train(X, 6, c);
  EXPECT_EQ(again.loss_history(), h);
}
