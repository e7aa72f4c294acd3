#pragma once

// Secondary-landmark predictor f: flattened canonical primaries (3P) through
// three hidden layers to flattened canonical secondaries (3S).

#include <cstdint>
#include <string>
#include <vector>

#include "seclm/autodiff.hpp"
#include "seclm/geometry.hpp"

namespace seclm {

enum class Activation { Tanh, Relu };

struct PredictorConfig {
  std::size_t primary_count = 13;
  std::size_t secondary_count = 6;
  std::vector<std::size_t> hidden{128, 128, 128};
  Activation activation = Activation::Tanh;

  void validate() const;
};

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Parameters under "predictor/l<i>/{weight,bias}"; weights are (in, out).
/// `zero_output` zeroes the final weight so the output equals its bias.
ad::ParameterSet init_predictor(const PredictorConfig& config, std::uint64_t seed, bool zero_output = false);

/// (3P) or (N, 3P) input → (3S) or (N, 3S) output.
ad::Var predictor_forward(const PredictorConfig& config, const ad::BoundParameters& params, const ad::Var& input);

/// Canonical primaries → canonical secondaries. Throws on non-finite input.
std::vector<Vec3> predict_secondary(const PredictorConfig& config, const ad::ParameterSet& params,
                                    const std::vector<Vec3>& primary_canonical);

/// Maps canonical predictions back to the world with the inverse of the
/// world → canonical transform `T`.
std::vector<Vec3> denormalize_prediction(const std::vector<Vec3>& pred, const SimilarityTransform& T);

}  // namespace seclm
