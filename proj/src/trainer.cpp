#include "seclm/trainer.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "seclm/checkpoint.hpp"
#include "seclm/error.hpp"
#include "seclm/optim.hpp"

namespace seclm {

namespace fs = std::filesystem;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Labeled: return "ll";
    case TrainMode::Triangulation: return "ll+t";
    case TrainMode::Geometric: return "ll+g";
    case TrainMode::GeometricContrastive: return "ll+g+c";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  for (TrainMode m : all_train_modes())
    if (to_string(m) == s) return m;
  throw Error(ErrorKind::Config, "unknown training mode '" + s + "' (expected ll, ll+t, ll+g or ll+g+c)");
}

std::vector<TrainMode> all_train_modes() {
  return {TrainMode::Labeled, TrainMode::Triangulation, TrainMode::Geometric, TrainMode::GeometricContrastive};
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be at least 1");
  if (unlabeled_batch < 1) throw Error(ErrorKind::Config, "unlabeled_batch must be at least 1");
  if (!(learning_rate > 0.0) || !(decay_rate > 0.0) || decay_steps == 0)
    throw Error(ErrorKind::Config, "learning rate, decay rate and decay steps must be positive");
  if (!(lambda_l >= 0.0) || !(regression_weight >= 0.0)) throw Error(ErrorKind::Config, "loss weights must be non-negative");
  if (!(label_ratio > 0.0) || label_ratio > 1.0) throw Error(ErrorKind::Config, "label_ratio must lie in (0, 1]");
  if (threads < 1) throw Error(ErrorKind::Config, "threads must be at least 1");
  if (log_every < 1) throw Error(ErrorKind::Config, "log_every must be at least 1");
  detector.validate();
  predictor.validate();
  if (detector.primary_count != predictor.primary_count || detector.secondary_count != predictor.secondary_count)
    throw Error(ErrorKind::Config, "detector and predictor landmark counts differ");
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"unlabeled_batch", c.unlabeled_batch},
          {"learning_rate", c.learning_rate},
          {"decay_rate", c.decay_rate},
          {"decay_steps", c.decay_steps},
          {"lambda_l", c.lambda_l},
          {"weight_reprojection", c.weights.reprojection},
          {"weight_self", c.weights.self_correlation},
          {"weight_cross", c.weights.cross_correlation},
          {"regression_weight", c.regression_weight},
          {"stop_primary_gradient", c.stop_primary_gradient},
          {"refine_predictor", c.refine_predictor},
          {"mode", to_string(c.mode)},
          {"seed", c.seed},
          {"pretrain_steps", c.pretrain_steps},
          {"refine_steps", c.refine_steps},
          {"label_ratio", c.label_ratio},
          {"threads", c.threads},
          {"log_every", c.log_every},
          {"image_size", c.detector.image_size},
          {"stage_channels", c.detector.stage_channels},
          {"feature_dim", c.detector.feature_dim},
          {"temperature", c.detector.temperature},
          {"primary_count", c.detector.primary_count},
          {"secondary_count", c.detector.secondary_count},
          {"predictor_hidden", c.predictor.hidden},
          {"predictor_activation", to_string(c.predictor.activation)}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "training config must be a JSON object");
  const json known = to_json(c);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw Error(ErrorKind::Config, "unknown training config key '" + k + "'");
  try {
    auto opt = [&](const char* k, auto& v) {
      if (j.contains(k)) v = j[k].get<std::remove_reference_t<decltype(v)>>();
    };
    opt("batch_size", c.batch_size);
    opt("unlabeled_batch", c.unlabeled_batch);
    opt("learning_rate", c.learning_rate);
    opt("decay_rate", c.decay_rate);
    opt("decay_steps", c.decay_steps);
    opt("lambda_l", c.lambda_l);
    opt("weight_reprojection", c.weights.reprojection);
    opt("weight_self", c.weights.self_correlation);
    opt("weight_cross", c.weights.cross_correlation);
    opt("regression_weight", c.regression_weight);
    opt("stop_primary_gradient", c.stop_primary_gradient);
    opt("refine_predictor", c.refine_predictor);
    if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
    opt("seed", c.seed);
    opt("pretrain_steps", c.pretrain_steps);
    opt("refine_steps", c.refine_steps);
    opt("label_ratio", c.label_ratio);
    opt("threads", c.threads);
    opt("log_every", c.log_every);
    opt("image_size", c.detector.image_size);
    opt("stage_channels", c.detector.stage_channels);
    opt("feature_dim", c.detector.feature_dim);
    opt("temperature", c.detector.temperature);
    opt("primary_count", c.detector.primary_count);
    opt("secondary_count", c.detector.secondary_count);
    opt("predictor_hidden", c.predictor.hidden);
    if (j.contains("predictor_activation")) c.predictor.activation = activation_from_string(j["predictor_activation"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("training config: ") + e.what());
  }
  c.predictor.primary_count = c.detector.primary_count;
  c.predictor.secondary_count = c.detector.secondary_count;
  return c;
}

ad::ParameterSet initial_parameters(const TrainConfig& config) {
  ad::ParameterSet p = init_detector(config.detector, derive_seed(config.seed, 0xde7));
  for (auto& [k, v] : init_predictor(config.predictor, derive_seed(config.seed, 0x9ed))) p[k] = std::move(v);
  return p;
}

namespace {

struct ItemResult {
  LossBreakdown loss;
  ad::ParameterSet grads;
};
using Item = std::function<ItemResult()>;

/// Runs the items on up to `threads` workers; the reduction is in item order.
ItemResult run_items(const std::vector<Item>& items, std::size_t threads) {
  std::vector<ItemResult> out(items.size());
  std::vector<std::exception_ptr> errors(items.size());
  auto work = [&](std::atomic<std::size_t>& next) {
    for (std::size_t i; (i = next++) < items.size();) {
      try {
        out[i] = items[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::atomic<std::size_t> next{0};
  const std::size_t n = std::min(threads, items.size());
  if (n <= 1) {
    work(next);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work, std::ref(next));
    for (auto& t : pool) t.join();
  }
  ItemResult total;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    total.loss += out[i].loss;
    ad::accumulate(total.grads, out[i].grads);
  }
  return total;
}

struct ViewRef {
  const MultiviewFrame* frame;
  std::size_t view;
};

struct Pools {
  std::vector<ViewRef> labeled;                 // image + 2D truth
  std::vector<const MultiviewFrame*> multiview; // image in ≥ 2 views
  Eigen::MatrixXd canonical_primary;            // rows: 3P
  Eigen::MatrixXd canonical_secondary;          // rows: 3S
};

Pools build_pools(const DatasetSplit& split) {
  Pools p;
  const std::size_t P = split.skeleton.primary_count(), S = split.skeleton.secondary_count();
  for (std::size_t i : split.labeled_primary) {
    const MultiviewFrame& f = split.frames.at(i);
    for (std::size_t v = 0; v < f.views.size(); ++v)
      if (f.views[v].image && f.views[v].truth) p.labeled.push_back({&f, v});
  }
  for (const auto& f : split.frames) {
    std::size_t n = 0;
    for (const auto& v : f.views) n += v.image ? 1 : 0;
    if (n >= 2) p.multiview.push_back(&f);
  }
  // Canonical 3D targets: triangulated 2D labels of the first two fully visible views.
  std::vector<Eigen::VectorXd> zs, xs;
  for (std::size_t i : split.labeled_secondary) {
    const MultiviewFrame& f = split.frames.at(i);
    std::vector<std::size_t> full;
    for (std::size_t v = 0; v < f.views.size(); ++v) {
      const auto& t = f.views[v].truth;
      if (t && std::all_of(t->primary_visible.begin(), t->primary_visible.end(), [](bool b) { return b; }) &&
          std::all_of(t->secondary_visible.begin(), t->secondary_visible.end(), [](bool b) { return b; }))
        full.push_back(v);
    }
    if (full.size() < 2) continue;
    const View& a = f.views[full[0]];
    const View& b = f.views[full[1]];
    const CameraParams& ca = split.rig.at(a.camera);
    const CameraParams& cb = split.rig.at(b.camera);
    Pose3D pose;
    bool ok = true;
    for (std::size_t k = 0; k < P + S && ok; ++k) {
      const auto tri = geometry::triangulate_dlt(a.truth->at(k), b.truth->at(k), ca, cb);
      ok = !tri.low_confidence;
      (k < P ? pose.primary : pose.secondary).push_back(tri.point);
    }
    if (!ok) continue;
    try {
      const Pose3D c = geometry::normalize_pose(pose, split.skeleton.frame).first;
      Eigen::VectorXd z(3 * P), x(3 * S);
      for (std::size_t k = 0; k < P; ++k) z.segment<3>(3 * static_cast<Eigen::Index>(k)) = c.primary[k];
      for (std::size_t k = 0; k < S; ++k) x.segment<3>(3 * static_cast<Eigen::Index>(k)) = c.secondary[k];
      zs.push_back(z);
      xs.push_back(x);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
    }
  }
  p.canonical_primary.resize(static_cast<Eigen::Index>(zs.size()), 3 * static_cast<Eigen::Index>(P));
  p.canonical_secondary.resize(static_cast<Eigen::Index>(xs.size()), 3 * static_cast<Eigen::Index>(S));
  for (std::size_t r = 0; r < zs.size(); ++r) {
    p.canonical_primary.row(static_cast<Eigen::Index>(r)) = zs[r].transpose();
    p.canonical_secondary.row(static_cast<Eigen::Index>(r)) = xs[r].transpose();
  }
  return p;
}

Tensor rows_tensor(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Tensor t({rows.size(), static_cast<std::size_t>(m.cols())});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(r, static_cast<std::size_t>(c)) = m(rows[r], c);
  return t;
}

Item labeled_item(const TrainConfig& cfg, const ad::ParameterSet& params, ViewRef ref) {
  return [&cfg, &params, ref] {
    ad::Tape tape;
    const auto bound = ad::bind(tape, with_prefix(params, "detector/"));
    const auto out = detector_forward(cfg.detector, bound, tape.constant(image_tensor(*ref.frame->views[ref.view].image)));
    const LabeledTerms t = labeled_loss_terms(out.keypoints, *ref.frame->views[ref.view].truth);
    const double w = 1.0 / static_cast<double>(cfg.batch_size);
    const Var loss = ad::scale(t.primary + t.secondary, cfg.lambda_l * w);
    ItemResult r;
    r.loss.labeled_primary = w * t.primary.item();
    r.loss.labeled_secondary = w * t.secondary.item();
    r.loss.total = loss.item();
    r.loss.labeled_items = 1;
    r.grads = ad::collect(tape.backward(loss), bound);
    return r;
  };
}

Item regression_item(const TrainConfig& cfg, const ad::ParameterSet& params, const Pools& pools, std::vector<Eigen::Index> rows) {
  return [&cfg, &params, &pools, rows = std::move(rows)] {
    ad::Tape tape;
    const auto bound = ad::bind(tape, with_prefix(params, "predictor/"));
    const Var pred = predictor_forward(cfg.predictor, bound, tape.constant(rows_tensor(pools.canonical_primary, rows)));
    const Var target = tape.constant(rows_tensor(pools.canonical_secondary, rows));
    const Var loss = ad::scale(ad::sum(ad::square(pred - target)), cfg.regression_weight / static_cast<double>(rows.size()));
    ItemResult r;
    r.loss.predictor_regression = loss.item();
    r.loss.total = loss.item();
    r.grads = ad::collect(tape.backward(loss), bound);
    return r;
  };
}

Item unlabeled_item(const TrainConfig& cfg, const ad::ParameterSet& params, const DatasetSplit& split, const MultiviewFrame* f,
                    std::size_t vi, std::size_t vj) {
  return [&cfg, &params, &split, f, vi, vj] {
    ItemResult r;
    r.loss.unlabeled_pairs = 1;
    ad::Tape tape;
    auto bound = ad::bind(tape, with_prefix(params, "detector/"));
    bound.merge(ad::bind(tape, with_prefix(params, "predictor/"), cfg.refine_predictor));
    const auto oi = detector_forward(cfg.detector, bound, tape.constant(image_tensor(*f->views[vi].image)));
    const auto oj = detector_forward(cfg.detector, bound, tape.constant(image_tensor(*f->views[vj].image)));
    const CameraParams& ci = split.rig.at(f->views[vi].camera);
    const CameraParams& cj = split.rig.at(f->views[vj].camera);
    const double w = 1.0 / static_cast<double>(cfg.unlabeled_batch);
    const std::size_t P = cfg.detector.primary_count;
    Var loss;
    if (cfg.mode == TrainMode::Triangulation) {
      std::size_t skipped = 0;
      loss = ad::scale(triangulation_baseline_loss(oi.keypoints, oj.keypoints, ci, cj, P, &skipped), w);
      r.loss.triangulation = loss.item();
    } else {
      GeometricPrediction g;
      try {
        g = predict_from_views(oi.keypoints, oj.keypoints, ci, cj, split.skeleton.frame, cfg.predictor, bound, cfg.stop_primary_gradient);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Degenerate) throw;
        g.skip_reason = e.what();
      }
      if (g.skip_reason) {
        r.loss.unlabeled_pairs = 0;
        r.loss.skipped_pairs = 1;
        return r;
      }
      const auto h = static_cast<std::size_t>(cfg.detector.heatmap_size());
      const ViewInputs in_i{oi.keypoints, oi.features, h, h, cfg.detector.stride(), &ci};
      const ViewInputs in_j{oj.keypoints, oj.features, h, h, cfg.detector.stride(), &cj};
      const UnlabeledTerms t = unlabeled_loss_terms(in_i, in_j, g.secondary_world, P, cfg.mode == TrainMode::GeometricContrastive);
      loss = ad::scale(combine_unlabeled(t, cfg.weights), w);
      r.loss.reprojection_i = w * t.reprojection_i.item();
      r.loss.reprojection_j = w * t.reprojection_j.item();
      if (t.self_correlation.valid()) r.loss.self_correlation = w * t.self_correlation.item();
      if (t.cross_correlation.valid()) r.loss.cross_correlation = w * t.cross_correlation.item();
      r.loss.zero_norm_warnings = t.zero_norm_warnings;
    }
    r.loss.total = loss.item();
    r.grads = ad::collect(tape.backward(loss), bound);
    return r;
  };
}

void save_params(const fs::path& path, const ad::ParameterSet& params, const TrainConfig& cfg, int phase, std::size_t step) {
  Checkpoint c;
  c.parameters = params;
  c.metadata = {{"phase", phase}, {"step", step}, {"mode", to_string(cfg.mode)}, {"seed", cfg.seed}, {"label_ratio", cfg.label_ratio}};
  save_checkpoint(path, c);
}

PhaseResult run_phase(const TrainConfig& cfg, const DatasetSplit& split, ad::ParameterSet params, int phase, const fs::path& out_dir) {
  cfg.validate();
  if (split.skeleton.primary_count() != cfg.detector.primary_count || split.skeleton.secondary_count() != cfg.detector.secondary_count)
    throw Error(ErrorKind::Config, "skeleton landmark counts do not match the model config");
  const Pools pools = build_pools(split);
  if (pools.labeled.empty()) throw Error(ErrorKind::Data, "the split has no labeled image views");
  const bool unlabeled = phase == 2 && cfg.mode != TrainMode::Labeled;
  if (unlabeled && pools.multiview.empty()) throw Error(ErrorKind::Data, "the split has no frames with two or more images");
  if (unlabeled && split.rig.size() < 2) throw Error(ErrorKind::Data, "unlabeled training needs a calibrated rig with two or more cameras");

  PhaseResult out;
  Adam adam;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x7a, static_cast<std::uint64_t>(phase)));
  const std::size_t steps = phase == 1 ? cfg.pretrain_steps : cfg.refine_steps;
  const std::size_t offset = phase == 1 ? 0 : cfg.pretrain_steps;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t step = offset + s;
    std::vector<Item> items;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) items.push_back(labeled_item(cfg, params, pools.labeled[rng() % pools.labeled.size()]));
    if (pools.canonical_primary.rows() > 0 && cfg.regression_weight > 0.0) {
      std::vector<Eigen::Index> rows;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) rows.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::size_t>(pools.canonical_primary.rows())));
      items.push_back(regression_item(cfg, params, pools, std::move(rows)));
    }
    if (unlabeled)
      for (std::size_t b = 0; b < cfg.unlabeled_batch; ++b) {
        const MultiviewFrame* f = pools.multiview[rng() % pools.multiview.size()];
        std::vector<std::size_t> with_image;
        for (std::size_t v = 0; v < f->views.size(); ++v)
          if (f->views[v].image) with_image.push_back(v);
        const std::size_t a = rng() % with_image.size();
        std::size_t c = rng() % (with_image.size() - 1);
        if (c >= a) ++c;
        items.push_back(unlabeled_item(cfg, params, split, f, with_image[a], with_image[c]));
      }
    ItemResult r = run_items(items, cfg.threads);
    r.loss.lambda_l = cfg.lambda_l;
    if (!std::isfinite(r.loss.total)) {
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        save_params(out_dir / "last_good.ckpt.json", params, cfg, phase, step);
      }
      throw Error(ErrorKind::Numerical, "non-finite loss at step " + std::to_string(step) + " (phase " + std::to_string(phase) + ")");
    }
    const double lr = decayed_learning_rate(cfg.learning_rate, cfg.decay_rate, cfg.decay_steps, step);
    if (s % cfg.log_every == 0 || s + 1 == steps) out.log.push_back({step, phase, lr, r.loss});
    adam.step(params, r.grads, lr);
  }
  out.params = std::move(params);
  return out;
}

std::vector<Pose2D> detections(const DetectorConfig& detector, const ad::ParameterSet& params, const std::vector<const MultiviewFrame*>& frames,
                               std::vector<Pose2D>& truths) {
  std::vector<Pose2D> preds;
  for (const auto* f : frames)
    for (const auto& v : f->views)
      if (v.image && v.truth) {
        preds.push_back(detect(detector, params, *v.image).pose);
        truths.push_back(*v.truth);
      }
  if (preds.empty()) throw Error(ErrorKind::Data, "no evaluation views with images and truth");
  return preds;
}

}  // namespace

PhaseResult pretrain(const TrainConfig& config, const DatasetSplit& split, const fs::path& out_dir) {
  return run_phase(config, split, initial_parameters(config), 1, out_dir);
}

PhaseResult refine(const TrainConfig& config, const DatasetSplit& split, const PhaseResult& phase1, const fs::path& out_dir) {
  return run_phase(config, split, phase1.params, 2, out_dir);
}

csv::Writer training_log(const std::vector<LogEntry>& entries) {
  csv::Writer w(kTrainLogHeader);
  for (const auto& e : entries) {
    const LossBreakdown& l = e.loss;
    w.row({std::to_string(e.step), std::to_string(e.phase), csv::format(e.lr), csv::format(l.reprojection_i), csv::format(l.reprojection_j),
           csv::format(l.self_correlation), csv::format(l.cross_correlation), csv::format(l.triangulation), csv::format(l.labeled_primary),
           csv::format(l.labeled_secondary), csv::format(l.predictor_regression), csv::format(l.total), std::to_string(l.labeled_items),
           std::to_string(l.unlabeled_pairs), std::to_string(l.skipped_pairs), std::to_string(l.zero_norm_warnings)});
  }
  return w;
}

TrainResult train(const TrainConfig& config, const DatasetSplit& split, const fs::path& out_dir) {
  TrainResult r;
  r.phase1 = pretrain(config, split, out_dir);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_params(out_dir / "phase1.ckpt.json", r.phase1.params, config, 1, config.pretrain_steps);
  }
  r.final = refine(config, split, r.phase1, out_dir);
  if (!out_dir.empty()) {
    save_params(out_dir / "final.ckpt.json", r.final.params, config, 2, config.pretrain_steps + config.refine_steps);
    std::vector<LogEntry> log = r.phase1.log;
    log.insert(log.end(), r.final.log.begin(), r.final.log.end());
    training_log(log).save(out_dir / "train_log.csv");
  }
  return r;
}

PckhResult evaluate_secondary(const DetectorConfig& detector, const ad::ParameterSet& params, const std::vector<const MultiviewFrame*>& frames,
                              const SkeletonSpec& skeleton, const std::vector<double>& thresholds) {
  std::vector<Pose2D> truths;
  const auto preds = detections(detector, params, frames, truths);
  std::vector<std::size_t> ids(skeleton.secondary_count());
  std::iota(ids.begin(), ids.end(), skeleton.primary_count());
  return pckh(preds, truths, thresholds, skeleton.reference_pair, ids);
}

PckhResult evaluate_primary(const DetectorConfig& detector, const ad::ParameterSet& params, const std::vector<const MultiviewFrame*>& frames,
                            const SkeletonSpec& skeleton, const std::vector<double>& thresholds) {
  std::vector<Pose2D> truths;
  const auto preds = detections(detector, params, frames, truths);
  std::vector<std::size_t> ids(skeleton.primary_count());
  std::iota(ids.begin(), ids.end(), 0);
  return pckh(preds, truths, thresholds, skeleton.reference_pair, ids);
}

AblationResult run_ablation(const std::vector<TrainConfig>& grid, const std::vector<MultiviewFrame>& train_frames,
                            const std::vector<const MultiviewFrame*>& test_frames, const SkeletonSpec& skeleton, const Rig& rig,
                            const fs::path& out_dir) {
  AblationResult result;
  std::map<std::string, DatasetSplit> splits;
  std::map<std::string, PhaseResult> phase1;
  std::vector<std::string> names;
  for (std::size_t k = skeleton.primary_count(); k < skeleton.landmark_count(); ++k) names.push_back(skeleton.names[k]);
  for (const TrainConfig& cfg : grid) {
    AblationRun run{cfg, std::nullopt, std::nullopt, std::nullopt};
    try {
      cfg.validate();
      const std::string split_key = csv::format(cfg.label_ratio) + "/" + std::to_string(cfg.seed);
      auto sit = splits.find(split_key);
      if (sit == splits.end()) sit = splits.emplace(split_key, make_splits(train_frames, skeleton, rig, cfg.label_ratio, cfg.seed)).first;
      json key = to_json(cfg);
      for (const char* k : {"mode", "refine_steps", "unlabeled_batch", "weight_reprojection", "weight_self", "weight_cross",
                            "stop_primary_gradient", "refine_predictor", "log_every", "threads"}) key.erase(k);
      auto pit = phase1.find(key.dump());
      const fs::path dir = out_dir.empty() ? fs::path{} : out_dir / (to_string(cfg.mode) + "_r" + csv::format(cfg.label_ratio) + "_s" + std::to_string(cfg.seed));
      if (pit == phase1.end()) pit = phase1.emplace(key.dump(), pretrain(cfg, sit->second, dir)).first;
      TrainResult tr;
      tr.phase1 = pit->second;
      tr.final = refine(cfg, sit->second, tr.phase1, dir);
      run.pckh = evaluate_secondary(cfg.detector, tr.final.params, test_frames, skeleton);
      append_results(result.table, to_string(cfg.mode), cfg.label_ratio, *run.pckh, names);
      if (!dir.empty()) {
        fs::create_directories(dir);
        save_params(dir / "phase1.ckpt.json", tr.phase1.params, cfg, 1, cfg.pretrain_steps);
        save_params(dir / "final.ckpt.json", tr.final.params, cfg, 2, cfg.pretrain_steps + cfg.refine_steps);
        std::vector<LogEntry> log = tr.phase1.log;
        log.insert(log.end(), tr.final.log.begin(), tr.final.log.end());
        training_log(log).save(dir / "train_log.csv");
      }
      run.result = std::move(tr);
    } catch (const Error& e) {
      run.error = e.what();
      result.table.row({to_string(cfg.mode), csv::format(cfg.label_ratio), "failed", "NA", "NA", "0"});
    }
    result.runs.push_back(std::move(run));
  }
  return result;
}

}  // namespace seclm
