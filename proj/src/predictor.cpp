#include "seclm/predictor.hpp"

#include <cmath>
#include <random>

#include "seclm/error.hpp"

namespace seclm {

using ad::Tensor;
using ad::Var;

void PredictorConfig::validate() const {
  if (primary_count == 0 || secondary_count == 0) throw Error(ErrorKind::Config, "predictor needs primary and secondary landmarks");
  if (hidden.empty()) throw Error(ErrorKind::Config, "predictor needs at least one hidden layer");
  for (std::size_t h : hidden)
    if (h == 0) throw Error(ErrorKind::Config, "predictor hidden widths must be positive");
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw Error(ErrorKind::Config, "unknown activation '" + s + "'");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

ad::ParameterSet init_predictor(const PredictorConfig& config, std::uint64_t seed, bool zero_output) {
  config.validate();
  std::mt19937_64 rng(seed);
  ad::ParameterSet p;
  std::vector<std::size_t> widths{3 * config.primary_count};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(3 * config.secondary_count);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const bool last = l + 2 == widths.size();
    // Glorot-normal for tanh, He-normal for relu.
    const double gain = config.activation == Activation::Tanh ? std::sqrt(2.0 / (in + out)) : std::sqrt(2.0 / in);
    std::normal_distribution<double> normal(0.0, gain);
    Tensor w({in, out});
    if (!(last && zero_output))
      for (double& v : w.data()) v = normal(rng);
    const std::string name = "predictor/l" + std::to_string(l);
    p[name + "/weight"] = std::move(w);
    p[name + "/bias"] = Tensor({out}, 0.0);
  }
  return p;
}

Var predictor_forward(const PredictorConfig& config, const ad::BoundParameters& params, const Var& input) {
  const bool single = input.value().rank() == 1;
  const std::size_t in = 3 * config.primary_count;
  if ((single && input.size() != in) || (!single && (input.value().rank() != 2 || input.value().cols() != in)))
    throw Error(ErrorKind::Shape, "predictor expects (" + std::to_string(in) + ") or (N, " + std::to_string(in) + ") input, got " + ad::to_string(input.shape()));
  Var x = single ? ad::reshape(input, {1, in}) : input;
  const std::size_t layers = config.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string name = "predictor/l" + std::to_string(l);
    x = ad::add_row(ad::matmul(x, ad::get(params, name + "/weight")), ad::get(params, name + "/bias"));
    if (l + 1 < layers) x = config.activation == Activation::Tanh ? ad::tanh(x) : ad::relu(x);
  }
  return single ? ad::reshape(x, {3 * config.secondary_count}) : x;
}

std::vector<Vec3> predict_secondary(const PredictorConfig& config, const ad::ParameterSet& params,
                                    const std::vector<Vec3>& primary_canonical) {
  if (primary_canonical.size() != config.primary_count)
    throw Error(ErrorKind::Shape, "predictor expects " + std::to_string(config.primary_count) + " primaries, got " + std::to_string(primary_canonical.size()));
  std::vector<double> flat;
  for (const Vec3& p : primary_canonical) {
    if (!p.allFinite()) throw Error(ErrorKind::Precondition, "predictor input is not finite");
    flat.insert(flat.end(), {p.x(), p.y(), p.z()});
  }
  ad::Tape tape;
  const auto bound = ad::bind(tape, params, false);
  const Tensor& y = predictor_forward(config, bound, tape.constant(Tensor::vector(std::move(flat)))).value();
  std::vector<Vec3> out(config.secondary_count);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = Vec3(y[3 * k], y[3 * k + 1], y[3 * k + 2]);
  return out;
}

std::vector<Vec3> denormalize_prediction(const std::vector<Vec3>& pred, const SimilarityTransform& T) {
  std::vector<Vec3> out;
  out.reserve(pred.size());
  for (const Vec3& p : pred) out.push_back(T.invert(p));
  return out;
}

}  // namespace seclm
