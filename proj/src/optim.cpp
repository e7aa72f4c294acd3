#include "seclm/optim.hpp"

#include <cmath>

#include "seclm/error.hpp"

namespace seclm {

void Adam::step(ad::ParameterSet& params, const ad::ParameterSet& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [path, g] : grads) {
    auto it = params.find(path);
    if (it == params.end()) throw Error(ErrorKind::Precondition, "gradient for unknown parameter '" + path + "'");
    ad::Tensor& p = it->second;
    if (g.shape() != p.shape()) throw Error(ErrorKind::Shape, "gradient " + ad::to_string(g.shape()) + " vs parameter " + ad::to_string(p.shape()) + " at '" + path + "'");
    auto& m = m_.try_emplace(path, ad::Tensor::zeros_like(p)).first->second;
    auto& v = v_.try_emplace(path, ad::Tensor::zeros_like(p)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

double decayed_learning_rate(double lr0, double rate, std::size_t decay_steps, std::size_t step) {
  if (decay_steps == 0) throw Error(ErrorKind::Config, "decay_steps must be positive");
  return lr0 * std::pow(rate, static_cast<double>(step / decay_steps));
}

}  // namespace seclm
