#pragma once

// Imputation baselines: ALS / weighted-λ ALS matrix completion, a
// nearest-neighbour wrapper that completes one query row against its closest
// labeled poses, and a pose-vector VAE.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seclm/autodiff.hpp"
#include "seclm/detector.hpp"
#include "seclm/eval.hpp"
#include "seclm/predictor.hpp"
#include "seclm/synthdata.hpp"

namespace seclm {

struct CompletionMatrix {
  Eigen::MatrixXd values;  // unobserved entries are ignored
  Eigen::MatrixXd mask;    // 1 observed, 0 missing

  void validate() const;
};

struct AlsConfig {
  std::size_t rank = 8;
  double lambda = 1e-2;
  std::size_t iterations = 100;
  /// Weighted-λ regularization: row i uses λ·n_i/n̄ and column j λ·m_j/m̄,
  /// with n, m the observation counts and n̄, m̄ their means.
  bool weighted = false;
};

struct CompletionResult {
  Eigen::MatrixXd completed;  // observed entries keep their input values
  Eigen::MatrixXd U;          // rows × r
  Eigen::MatrixXd W;          // r × cols
  std::vector<double> objective;  // masked objective after each half step
  bool diverged = false;      // objective rose above 10× its initial value
};

/// Initialised from the rank-r SVD of the column-mean-filled matrix.
CompletionResult als_complete(const CompletionMatrix& M, const AlsConfig& config);

/// Masked objective Σ_obs (M − UW)² + row/column ridge terms.
double als_objective(const CompletionMatrix& M, const Eigen::MatrixXd& U, const Eigen::MatrixXd& W, const AlsConfig& config);

struct NeighborCompletion {
  Eigen::VectorXd secondary;
  double nn_distance = 0.0;
  std::size_t nn_index = 0;
};

/// Appends the query (primary columns observed, secondary columns missing) to
/// the `neighbours` labeled rows closest in Euclidean primary distance and
/// completes it. The rank is clamped to the neighbour count.
NeighborCompletion nearest_neighbor_complete(const Eigen::MatrixXd& labeled, std::size_t primary_cols,
                                             const Eigen::VectorXd& query_primary, const AlsConfig& config,
                                             std::size_t neighbours = 64);

struct VaeConfig {
  std::size_t latent = 8;
  std::size_t hidden = 64;
  std::size_t steps = 3000;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  double mask_probability = 0.5;  // chance a training row has its secondaries hidden
  std::size_t imputation_iterations = 5;
  std::uint64_t seed = 11;
};

/// KL(N(μ, diag e^logvar) ‖ N(0, I)).
double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);
ad::Var gaussian_kl(const ad::Var& mu, const ad::Var& logvar);
/// (Σ‖recon − target‖² + KL) / rows for a (rows, D) batch.
ad::Var vae_objective(const ad::Var& recon, const ad::Var& target, const ad::Var& mu, const ad::Var& logvar);

class Vae {
 public:
  static Vae train(const Eigen::MatrixXd& data, std::size_t primary_cols, const VaeConfig& config);

  bool trained() const { return trained_; }
  /// Secondaries for a query whose primaries are known: missing entries start
  /// at the training mean and are refined by repeated encode/decode.
  Eigen::VectorXd impute(const Eigen::VectorXd& query_primary) const;
  /// Deterministic reconstruction (posterior mean) of a full row.
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& row) const;
  const std::vector<double>& loss_history() const { return history_; }

 private:
  ad::ParameterSet params_;
  Eigen::VectorXd mean_, scale_;
  std::size_t primary_cols_ = 0;
  VaeConfig config_;
  bool trained_ = false;
  std::vector<double> history_;
};

// --- comparison harness -----------------------------------------------------

struct BaselineRunConfig {
  AlsConfig als;
  VaeConfig vae;
  std::size_t neighbours = 64;
  std::size_t view_i = 0, view_j = 1;
  bool run_2d = true;
  bool run_3d = true;
  bool with_ground_truth_primaries = true;
};

struct BaselineResult {
  std::string method;  // e.g. "als-3d", "vae-2d-gtprim", "ours"
  PckhResult pckh;     // secondary landmarks, all test views
};

/// Trains the baselines on the labeled secondary frames of `labeled`
/// (D_X, 2D truth in every view), completes the secondaries of every test
/// frame from detected primaries (and optionally from true primaries) and
/// scores them against the detector's own secondaries ("ours") with PCKh at
/// `thresholds` on identical frame sets.
std::vector<BaselineResult> run_baselines(const std::vector<const MultiviewFrame*>& labeled,
                                          const std::vector<const MultiviewFrame*>& test, const Rig& rig,
                                          const SkeletonSpec& skeleton, const DetectorConfig& detector,
                                          const ad::ParameterSet& params, const BaselineRunConfig& config,
                                          const std::vector<double>& thresholds);

}  // namespace seclm
