#include "seclm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "seclm/error.hpp"
#include "seclm/losses.hpp"

namespace seclm {

std::vector<double> pckh_curve_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 20; ++i) g.push_back(i / 20.0);
  return g;
}

double PckhResult::rate(std::size_t t, std::size_t l) const {
  return counts[l] == 0 ? 0.0 : static_cast<double>(correct[t][l]) / static_cast<double>(counts[l]);
}

double PckhResult::mean_rate(std::size_t t) const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t l = 0; l < landmarks.size(); ++l)
    if (counts[l] > 0) {
      s += rate(t, l);
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

PckhResult pckh(const std::vector<Pose2D>& pred, const std::vector<Pose2D>& truth, const std::vector<double>& thresholds,
                std::pair<std::size_t, std::size_t> ref_pair, std::vector<std::size_t> landmarks) {
  if (pred.size() != truth.size())
    throw Error(ErrorKind::Shape, "pckh: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(truth.size()) + " truths");
  for (double t : thresholds)
    if (!(t >= 0.0)) throw Error(ErrorKind::Config, "pckh thresholds must be non-negative");
  PckhResult r;
  r.thresholds = thresholds;
  if (landmarks.empty() && !truth.empty()) {
    landmarks.resize(truth.front().landmark_count());
    std::iota(landmarks.begin(), landmarks.end(), 0);
  }
  r.landmarks = landmarks;
  r.correct.assign(thresholds.size(), std::vector<std::size_t>(landmarks.size(), 0));
  r.counts.assign(landmarks.size(), 0);
  for (std::size_t f = 0; f < truth.size(); ++f) {
    const Pose2D& gt = truth[f];
    const Pose2D& p = pred[f];
    if (p.landmark_count() != gt.landmark_count() || p.primary.size() != gt.primary.size())
      throw Error(ErrorKind::Shape, "pckh: frame " + std::to_string(f) + " landmark counts differ");
    ++r.frames;
    if (!gt.visible(ref_pair.first) || !gt.visible(ref_pair.second)) {
      ++r.skipped_frames;
      continue;
    }
    const double L = (gt.at(ref_pair.first) - gt.at(ref_pair.second)).norm();
    if (!(L > 0.0)) {
      ++r.skipped_frames;
      continue;
    }
    for (std::size_t l = 0; l < landmarks.size(); ++l) {
      const std::size_t k = landmarks[l];
      if (!gt.visible(k)) continue;
      ++r.counts[l];
      const double d = (p.at(k) - gt.at(k)).norm();
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        if (d <= thresholds[t] * L) ++r.correct[t][l];
    }
  }
  return r;
}

void CorrelationStats::finalize() {
  auto avg = [](const std::vector<double>& v) { return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
  mean_self = avg(self);
  mean_cross = avg(cross);
}

void accumulate_correlations(const ad::Tensor& features_i, const ad::Tensor& features_j, std::size_t h, std::size_t w,
                             int stride, const std::vector<Vec2>& points_i, const std::vector<Vec2>& points_j,
                             CorrelationStats& stats) {
  if (points_i.size() != points_j.size()) throw Error(ErrorKind::Shape, "correlation points differ in count");
  ad::Tape tape;
  const ad::Var fi = tape.constant(features_i), fj = tape.constant(features_j);
  auto sample = [&](const ad::Var& f, const Vec2& x) {
    return sample_feature(f, h, w, stride, tape.constant(ad::Tensor::vector({x.x(), x.y()}))).value();
  };
  std::vector<ad::Tensor> si, sj;
  for (std::size_t k = 0; k < points_i.size(); ++k) {
    si.push_back(sample(fi, points_i[k]));
    sj.push_back(sample(fj, points_j[k]));
  }
  for (std::size_t k = 0; k < si.size(); ++k) stats.self.push_back(normalized_cross_correlation(si[k].values(), sj[k].values()));
  for (const auto* s : {&si, &sj})
    for (std::size_t k = 0; k < s->size(); ++k)
      for (std::size_t l = k + 1; l < s->size(); ++l) stats.cross.push_back(normalized_cross_correlation((*s)[k].values(), (*s)[l].values()));
  ++stats.pairs;
}

CorrelationStats correlation_stats(const DetectorConfig& detector, const PredictorConfig& predictor, const ad::ParameterSet& params,
                                   const std::vector<const MultiviewFrame*>& frames, const Rig& rig, const FrameSpec& frame,
                                   std::uint64_t seed) {
  if (rig.size() < 2) throw Error(ErrorKind::Precondition, "correlation statistics need at least two views");
  CorrelationStats stats;
  const auto h = static_cast<std::size_t>(detector.heatmap_size());
  for (const MultiviewFrame* f : frames) {
    if (!f->has_images() || f->views.size() < 2) continue;
    std::mt19937_64 rng(derive_seed(seed, f->id, 0xc0));
    const std::size_t i = rng() % f->views.size();
    std::size_t j = rng() % (f->views.size() - 1);
    if (j >= i) ++j;
    const CameraParams& ci = rig.at(f->views[i].camera);
    const CameraParams& cj = rig.at(f->views[j].camera);
    ad::Tape tape;
    const auto bound = ad::bind(tape, params, false);
    const auto oi = detector_forward(detector, bound, tape.constant(image_tensor(*f->views[i].image)));
    const auto oj = detector_forward(detector, bound, tape.constant(image_tensor(*f->views[j].image)));
    GeometricPrediction g;
    try {
      g = predict_from_views(oi.keypoints, oj.keypoints, ci, cj, frame, predictor, bound);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
      g.skip_reason = e.what();
    }
    if (g.skip_reason) {
      ++stats.skipped;
      continue;
    }
    const ad::Tensor& X = g.secondary_world.value();
    std::vector<Vec2> pi, pj;
    bool behind = false;
    for (std::size_t k = 0; k < X.rows(); ++k) {
      const Vec3 x(X.at(k, 0), X.at(k, 1), X.at(k, 2));
      if (geometry::depth(ci, x) <= geometry::kMinDepth || geometry::depth(cj, x) <= geometry::kMinDepth) {
        behind = true;
        break;
      }
      pi.push_back(geometry::project(ci, x));
      pj.push_back(geometry::project(cj, x));
    }
    if (behind) {
      ++stats.skipped;
      continue;
    }
    accumulate_correlations(oi.features.value(), oj.features.value(), h, h, detector.stride(), pi, pj, stats);
  }
  if (stats.pairs == 0) throw Error(ErrorKind::Data, "no usable view pairs for correlation statistics");
  stats.finalize();
  return stats;
}

void append_results(csv::Writer& out, const std::string& method, double ratio, const PckhResult& r,
                    const std::vector<std::string>& names) {
  if (names.size() != r.landmarks.size()) throw Error(ErrorKind::Shape, "landmark names do not match the PCKh result");
  std::size_t total = 0;
  for (std::size_t c : r.counts) total += c;
  for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
    for (std::size_t l = 0; l < r.landmarks.size(); ++l)
      out.row({method, csv::format(ratio), names[l], csv::format(r.thresholds[t]), csv::format(r.rate(t, l)), std::to_string(r.counts[l])});
    out.row({method, csv::format(ratio), "mean", csv::format(r.thresholds[t]), csv::format(r.mean_rate(t)), std::to_string(total)});
  }
}

ReportSummary report_tables(const std::vector<csv::Table>& inputs, const std::filesystem::path& out_dir) {
  ReportSummary summary;
  summary.inputs = inputs.size();
  if (inputs.empty()) summary.warnings.push_back("no result tables given; writing empty tables");

  using Key = std::tuple<std::string, std::string, std::string, std::string>;  // method, ratio, landmark, t
  std::map<Key, std::string> value;
  std::vector<std::pair<std::string, std::string>> runs;  // (method, ratio) in order of appearance
  std::vector<std::string> landmarks;
  std::set<std::string> ts;
  for (const auto& t : inputs) {
    const std::size_t cm = t.column("method"), cr = t.column("ratio"), cl = t.column("landmark"), ct = t.column("t"),
                      cp = t.column("pckh");
    for (const auto& row : t.rows) {
      value[{row[cm], row[cr], row[cl], row[ct]}] = row[cp];
      const std::pair<std::string, std::string> run{row[cm], row[cr]};
      if (std::find(runs.begin(), runs.end(), run) == runs.end()) runs.push_back(run);
      if (row[cl] != "mean" && std::find(landmarks.begin(), landmarks.end(), row[cl]) == landmarks.end()) landmarks.push_back(row[cl]);
      ts.insert(row[ct]);
    }
  }
  auto lookup = [&](const std::string& m, const std::string& r, const std::string& l, double t) {
    auto it = value.find({m, r, l, csv::format(t)});
    if (it == value.end()) {
      ++summary.gaps;
      return std::string("NA");
    }
    return it->second;
  };
  std::vector<std::string> all_landmarks = landmarks;
  all_landmarks.push_back("mean");

  csv::Writer t1({"method", "ratio", "landmark", "pckh@0.25", "pckh@0.5", "pckh@0.75"});
  for (const auto& [m, r] : runs)
    for (const auto& l : all_landmarks) t1.row({m, r, l, lookup(m, r, l, 0.25), lookup(m, r, l, 0.5), lookup(m, r, l, 0.75)});
  t1.save(out_dir / "table1.csv");

  std::vector<std::string> h2{"method", "ratio"};
  h2.insert(h2.end(), all_landmarks.begin(), all_landmarks.end());
  csv::Writer t2(h2);
  for (const auto& [m, r] : runs) {
    std::vector<std::string> row{m, r};
    for (const auto& l : all_landmarks) row.push_back(lookup(m, r, l, 0.5));
    t2.row(std::move(row));
  }
  t2.save(out_dir / "table2.csv");

  csv::Writer t3({"ratio", "method", "mean_pckh@0.5"});
  std::vector<std::pair<std::string, std::string>> by_ratio = runs;
  std::stable_sort(by_ratio.begin(), by_ratio.end(), [](const auto& a, const auto& b) { return std::stod(a.second) < std::stod(b.second); });
  for (const auto& [m, r] : by_ratio) t3.row({r, m, lookup(m, r, "mean", 0.5)});
  t3.save(out_dir / "table3.csv");

  csv::Writer curve({"method", "ratio", "t", "pckh"});
  for (const auto& [m, r] : runs)
    for (double t : pckh_curve_grid())
      if (ts.contains(csv::format(t))) curve.row({m, r, csv::format(t), lookup(m, r, "mean", t)});
  curve.save(out_dir / "pckh_curve.csv");
  if (summary.gaps > 0) summary.warnings.push_back(std::to_string(summary.gaps) + " table cells missing (written as NA)");
  return summary;
}

}  // namespace seclm
