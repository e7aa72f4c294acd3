#pragma once

// Two-phase training. Phase 1 fits the detector on labeled views (λ_L·L_L)
// and the predictor on canonical triangulated labeled poses. Phase 2 adds
// the mode's unlabeled multiview term on random view pairs. The ablation
// grid evaluates secondary PCKh per mode and label ratio.

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "seclm/autodiff.hpp"
#include "seclm/csv.hpp"
#include "seclm/detector.hpp"
#include "seclm/eval.hpp"
#include "seclm/losses.hpp"
#include "seclm/predictor.hpp"
#include "seclm/synthdata.hpp"

namespace seclm {

enum class TrainMode {
  Labeled,               // L_L only
  Triangulation,         // + L_U^t
  Geometric,             // + L_U^g
  GeometricContrastive,  // + L_U^g + L_U^c
};

/// "ll", "ll+t", "ll+g", "ll+g+c".
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);
std::vector<TrainMode> all_train_modes();

struct TrainConfig {
  std::size_t batch_size = 10;      // labeled views per step
  std::size_t unlabeled_batch = 10; // view pairs per phase-2 step
  double learning_rate = 1e-4;
  double decay_rate = 0.8;
  std::size_t decay_steps = 2000;
  double lambda_l = kDefaultLambdaL;
  LossWeights weights{1.0, 15.0, 15.0};  // correlations are O(1) against pixel² reprojection
  double regression_weight = 1.0;   // predictor MSE on canonical labeled poses
  bool stop_primary_gradient = false;  // L_U^g does not move the detected primaries
  bool refine_predictor = false;       // L_U^g also updates the predictor
  TrainMode mode = TrainMode::GeometricContrastive;
  std::uint64_t seed = 1;
  std::size_t pretrain_steps = 5000;
  std::size_t refine_steps = 5000;
  double label_ratio = 0.1;
  std::size_t threads = 1;
  std::size_t log_every = 10;
  DetectorConfig detector;
  PredictorConfig predictor;

  void validate() const;
};

/// Flat JSON form used for config files and run snapshots. Absent keys keep
/// the values of `base`; unknown keys are a config error.
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

inline const std::vector<std::string> kTrainLogHeader{
    "step", "phase", "lr", "reprojection_i", "reprojection_j", "self_correlation", "cross_correlation", "triangulation",
    "labeled_primary", "labeled_secondary", "predictor_regression", "total", "labeled_items", "unlabeled_pairs",
    "skipped_pairs", "zero_norm_warnings"};

struct LogEntry {
  std::size_t step = 0;
  int phase = 1;
  double lr = 0.0;
  LossBreakdown loss;
};

struct PhaseResult {
  ad::ParameterSet params;  // detector/... and predictor/...
  std::vector<LogEntry> log;
};

/// Initial parameters for `config.seed` (shared by both phases).
ad::ParameterSet initial_parameters(const TrainConfig& config);

/// Phase 1. Throws Error(Data) when the split has no labeled image views.
/// On a non-finite loss with a non-empty `out_dir` the last good parameters
/// are written to last_good.ckpt.json there before Error(Numerical).
PhaseResult pretrain(const TrainConfig& config, const DatasetSplit& split, const std::filesystem::path& out_dir = {});
/// Phase 2 starting from `phase1`. Steps continue the learning-rate schedule
/// after the pretraining steps; the optimizer moments restart.
PhaseResult refine(const TrainConfig& config, const DatasetSplit& split, const PhaseResult& phase1,
                   const std::filesystem::path& out_dir = {});

struct TrainResult {
  PhaseResult phase1;
  PhaseResult final;
};

/// Both phases. With a non-empty `out_dir` writes phase1.ckpt.json,
/// final.ckpt.json and train_log.csv there.
TrainResult train(const TrainConfig& config, const DatasetSplit& split, const std::filesystem::path& out_dir = {});

csv::Writer training_log(const std::vector<LogEntry>& entries);

/// Secondary-landmark PCKh of the detector on every view (image + truth) of `frames`.
PckhResult evaluate_secondary(const DetectorConfig& detector, const ad::ParameterSet& params,
                              const std::vector<const MultiviewFrame*>& frames, const SkeletonSpec& skeleton,
                              const std::vector<double>& thresholds = kPckhThresholds);
/// Same for the primaries.
PckhResult evaluate_primary(const DetectorConfig& detector, const ad::ParameterSet& params,
                            const std::vector<const MultiviewFrame*>& frames, const SkeletonSpec& skeleton,
                            const std::vector<double>& thresholds = kPckhThresholds);

struct AblationRun {
  TrainConfig config;
  std::optional<TrainResult> result;
  std::optional<PckhResult> pckh;
  std::optional<std::string> error;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  csv::Writer table{kResultsHeader};
};

/// Trains every config of `grid` on splits of `train_frames` (one split per
/// label ratio, seeded by the config seed) and evaluates on `test_frames`.
/// Configs differing only in mode and phase-2 settings share phase 1. A
/// failing run yields a "failed" row and the grid continues.
AblationResult run_ablation(const std::vector<TrainConfig>& grid, const std::vector<MultiviewFrame>& train_frames,
                            const std::vector<const MultiviewFrame*>& test_frames, const SkeletonSpec& skeleton,
                            const Rig& rig, const std::filesystem::path& out_dir = {});

}  // namespace seclm
