#pragma once

#include <map>
#include <string>

#include "seclm/autodiff.hpp"

namespace seclm {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. State is keyed by
/// parameter path, so a ParameterSet can gain entries between steps.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// params ← params − lr·m̂/(√v̂ + ε) for every path present in `grads`.
  void step(ad::ParameterSet& params, const ad::ParameterSet& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, ad::Tensor> m_, v_;
};

/// lr(step) = lr0 · rate^⌊step / decay_steps⌋.
double decayed_learning_rate(double lr0, double rate, std::size_t decay_steps, std::size_t step);

}  // namespace seclm
