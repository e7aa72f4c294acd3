#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "seclm/error.hpp"
#include "seclm/eval.hpp"
#include "support/gradcheck.hpp"

using namespace seclm;

namespace {

Pose2D random_pose2d(std::mt19937_64& rng, std::size_t P = 3, std::size_t S = 2) {
  std::uniform_real_distribution<double> u(0.0, 64.0);
  std::vector<Vec2> p, s;
  for (std::size_t k = 0; k < P; ++k) p.emplace_back(u(rng), u(rng));
  for (std::size_t k = 0; k < S; ++k) s.emplace_back(u(rng), u(rng));
  return Pose2D::all_visible(p, s);
}

Pose2D jitter(const Pose2D& p, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  Pose2D q = p;
  for (auto& v : q.primary) v += Vec2(n(rng), n(rng));
  for (auto& v : q.secondary) v += Vec2(n(rng), n(rng));
  return q;
}

}  // namespace

TEST(Pckh, IdentityScoresOne) {
  std::mt19937_64 rng(71);
  std::vector<Pose2D> truth;
  for (int i = 0; i < 20; ++i) truth.push_back(random_pose2d(rng));
  const auto r = pckh(truth, truth, {0.0, 0.5}, {0, 1});
  EXPECT_EQ(r.frames, 20u);
  EXPECT_DOUBLE_EQ(r.mean_rate(0), 1.0);
  EXPECT_DOUBLE_EQ(r.mean_rate(1), 1.0);
}

TEST(Pckh, BoundaryIsInclusive) {
  const Pose2D gt = Pose2D::all_visible({Vec2(0, 0), Vec2(0, 8)}, {Vec2(10, 10)});
  Pose2D p = gt;
  p.secondary[0] += Vec2(4.0, 0.0);  // exactly 0.5·L
  const auto r = pckh({p}, {gt}, {0.5, 0.49}, {0, 1}, {2});
  EXPECT_EQ(r.correct[0][0], 1u);
  EXPECT_EQ(r.correct[1][0], 0u);
}

TEST(Pckh, MatchesBruteForceOracle) {
  std::mt19937_64 rng(72);
  std::vector<Pose2D> truth, pred;
  for (int i = 0; i < 50; ++i) {
    truth.push_back(random_pose2d(rng));
    pred.push_back(jitter(truth.back(), rng, 6.0));
    if (i % 7 == 0) truth.back().secondary_visible[1] = false;
  }
  const std::vector<double> ts{0.1, 0.25, 0.5};
  const auto r = pckh(pred, truth, ts, {0, 1}, {3, 4});
  for (std::size_t t = 0; t < ts.size(); ++t) {
    double rates = 0.0;
    for (std::size_t k : {3u, 4u}) {
      double hit = 0.0, n = 0.0;
      for (std::size_t f = 0; f < truth.size(); ++f) {
        if (!truth[f].visible(k)) continue;
        const double L = (truth[f].primary[0] - truth[f].primary[1]).norm();
        n += 1.0;
        hit += (pred[f].at(k) - truth[f].at(k)).norm() <= ts[t] * L ? 1.0 : 0.0;
      }
      rates += hit / n;
    }
    EXPECT_DOUBLE_EQ(r.mean_rate(t), rates / 2.0);
  }
  EXPECT_EQ(r.counts[1], 50u - 8u);
}

TEST(Pckh, MonotoneInThreshold) {
  std::mt19937_64 rng(73);
  std::vector<Pose2D> truth, pred;
  for (int i = 0; i < 40; ++i) {
    truth.push_back(random_pose2d(rng));
    pred.push_back(jitter(truth.back(), rng, 10.0));
  }
  const auto grid = pckh_curve_grid();
  ASSERT_EQ(grid.size(), 20u);
  EXPECT_DOUBLE_EQ(grid.front(), 0.05);
  EXPECT_DOUBLE_EQ(grid.back(), 1.0);
  const auto r = pckh(pred, truth, grid, {0, 1});
  for (std::size_t t = 1; t < grid.size(); ++t) EXPECT_GE(r.mean_rate(t), r.mean_rate(t - 1));
}

TEST(Pckh, ZeroReferenceLengthIsSkipped) {
  const Pose2D gt = Pose2D::all_visible({Vec2(3, 3), Vec2(3, 3)}, {Vec2(10, 10)});
  const auto r = pckh({gt}, {gt}, {0.5}, {0, 1});
  EXPECT_EQ(r.skipped_frames, 1u);
  EXPECT_EQ(r.counts[2], 0u);
  EXPECT_DOUBLE_EQ(r.mean_rate(0), 0.0);
  EXPECT_THROW(pckh({gt}, {}, {0.5}, {0, 1}), Error);
  EXPECT_THROW(pckh({gt}, {gt}, {-0.1}, {0, 1}), Error);
}

TEST(Correlations, OrthogonalFeaturesGiveSelfOneCrossZero) {
  // Cell c carries the basis vector e_c: features sampled at two different
  // cell centres are orthogonal, the same cell correlates perfectly.
  const std::size_t h = 2, w = 3;
  ad::Tensor f({h * w, h * w}, 0.0);
  for (std::size_t c = 0; c < h * w; ++c) f.at(c, c) = 1.0;
  const std::vector<Vec2> pts{Vec2(grid_to_pixel(0, 4), grid_to_pixel(0, 4)), Vec2(grid_to_pixel(2, 4), grid_to_pixel(1, 4)),
                              Vec2(grid_to_pixel(1, 4), grid_to_pixel(0, 4))};
  CorrelationStats s;
  accumulate_correlations(f, f, h, w, 4, pts, pts, s);
  s.finalize();
  EXPECT_NEAR(s.mean_self, 1.0, 1e-10);
  EXPECT_NEAR(s.mean_cross, 0.0, 1e-12);
  EXPECT_EQ(s.self.size(), 3u);
  EXPECT_NEAR(s.gap(), 1.0, 1e-10);
}

TEST(Results, AppendWritesPerLandmarkAndMeanRows) {
  const Pose2D gt = Pose2D::all_visible({Vec2(0, 0), Vec2(0, 8)}, {Vec2(10, 10), Vec2(20, 20)});
  const auto r = pckh({gt}, {gt}, {0.25, 0.5}, {0, 1}, {2, 3});
  csv::Writer out(kResultsHeader);
  append_results(out, "ours", 0.1, r, {"elbow", "ear"});
  EXPECT_EQ(out.size(), 2u * 3u);
  EXPECT_THROW(append_results(out, "ours", 0.1, r, {"elbow"}), Error);
}

TEST(Report, EmptyInputsAndDeterminism) {
  const auto dir = std::filesystem::temp_directory_path() / "seclm_report_test";
  std::filesystem::remove_all(dir);
  const ReportSummary empty = report_tables({}, dir / "empty");
  EXPECT_EQ(empty.inputs, 0u);

  csv::Table t;
  t.header = kResultsHeader;
  for (const char* m : {"ll", "ll+g+c"})
    for (const char* ratio : {"0.1", "0.5"})
      for (const char* lm : {"elbow", "mean"}) t.rows.push_back({m, ratio, lm, "0.5", "0.75", "10"});
  t.rows.push_back({"ll", "0.1", "mean", "0.25", "0.5", "10"});
  const ReportSummary a = report_tables({t}, dir / "a");
  const ReportSummary b = report_tables({t}, dir / "b");
  EXPECT_EQ(a.inputs, 1u);
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "pckh_curve.csv"}) {
    ASSERT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
    const auto ta = csv::read(dir / "a" / f), tb = csv::read(dir / "b" / f);
    EXPECT_EQ(ta.rows, tb.rows) << f;
  }
  EXPECT_GT(a.gaps, 0u);  // the 0.25 cell exists only for one method
  std::filesystem::remove_all(dir);
}
