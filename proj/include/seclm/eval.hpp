#pragma once

// PCKh, feature-correlation statistics and the merged report tables.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seclm/autodiff.hpp"
#include "seclm/csv.hpp"
#include "seclm/detector.hpp"
#include "seclm/geometry.hpp"
#include "seclm/predictor.hpp"
#include "seclm/synthdata.hpp"

namespace seclm {

inline const std::vector<double> kPckhThresholds{0.25, 0.5, 0.75};
/// 0.05, 0.10, ..., 1.00.
std::vector<double> pckh_curve_grid();

struct PckhResult {
  std::vector<double> thresholds;
  std::vector<std::size_t> landmarks;             // combined indices (primaries first)
  std::vector<std::vector<std::size_t>> correct;  // [threshold][landmark]
  std::vector<std::size_t> counts;                // evaluated (visible) instances per landmark
  std::size_t frames = 0;
  std::size_t skipped_frames = 0;                 // zero reference length or invisible reference

  double rate(std::size_t t, std::size_t l) const;
  /// Mean over landmarks of the per-landmark rates at threshold index `t`.
  double mean_rate(std::size_t t) const;
};

/// A landmark is correct iff ‖pred − truth‖ ≤ t·L with L = ‖truth[a] − truth[b]‖
/// for the reference pair (a, b) (combined indices). Invisible truth
/// landmarks are left out of the denominator. `landmarks` empty = all.
PckhResult pckh(const std::vector<Pose2D>& pred, const std::vector<Pose2D>& truth, const std::vector<double>& thresholds,
                std::pair<std::size_t, std::size_t> ref_pair, std::vector<std::size_t> landmarks = {});

struct CorrelationStats {
  std::vector<double> self;   // same landmark across the two views
  std::vector<double> cross;  // different landmarks within one view
  double mean_self = 0.0;
  double mean_cross = 0.0;
  std::size_t pairs = 0;
  std::size_t skipped = 0;

  double gap() const { return mean_self - mean_cross; }
  void finalize();
};

/// Correlations of (h·w, n) feature maps sampled at pixel positions
/// `points_i`, `points_j` (one row per landmark). Appends to `stats`.
void accumulate_correlations(const ad::Tensor& features_i, const ad::Tensor& features_j, std::size_t h, std::size_t w,
                             int stride, const std::vector<Vec2>& points_i, const std::vector<Vec2>& points_j,
                             CorrelationStats& stats);

/// For each frame (with images in every view) a seeded random view pair is
/// detected, the secondaries are predicted from the triangulated primaries and
/// the features are sampled at their projections. Throws Error(Data) when no
/// pair is usable.
CorrelationStats correlation_stats(const DetectorConfig& detector, const PredictorConfig& predictor,
                                   const ad::ParameterSet& params, const std::vector<const MultiviewFrame*>& frames,
                                   const Rig& rig, const FrameSpec& frame, std::uint64_t seed);

// --- results and report tables -------------------------------------------
//
// Every evaluation writes rows of the shared results schema:
//   method, ratio, landmark, t, pckh, count
// where `landmark` is a landmark name or "mean".

inline const std::vector<std::string> kResultsHeader{"method", "ratio", "landmark", "t", "pckh", "count"};

/// Appends secondary-landmark rows for every threshold (per landmark and the
/// mean) to `out`.
void append_results(csv::Writer& out, const std::string& method, double ratio, const PckhResult& result,
                    const std::vector<std::string>& landmark_names);

struct ReportSummary {
  std::size_t inputs = 0;
  std::size_t gaps = 0;
  std::vector<std::string> warnings;
};

/// Merges result tables into table1.csv (method × landmark × t per ratio),
/// table2.csv (method × landmark at t = 0.5), table3.csv (ratio × method mean
/// at t = 0.5) and pckh_curve.csv (method, ratio, t, mean pckh). Missing
/// cells are written as "NA" and counted as gaps.
ReportSummary report_tables(const std::vector<csv::Table>& inputs, const std::filesystem::path& out_dir);

}  // namespace seclm
