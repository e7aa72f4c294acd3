#include "seclm/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "seclm/error.hpp"

namespace seclm {

namespace op = ad;
using ad::Tensor;
using ad::Var;

namespace {

struct Stage {
  std::size_t kernel, stride, pad;
};
// Kernel 4 / pad 1 on the stride-2 stages keeps every cell centred on pixel
// (u + 0.5)·4 − 0.5, so the grid mapping is symmetric about the image centre.
constexpr Stage kStages[] = {{4, 2, 1}, {4, 2, 1}, {3, 1, 1}};

Tensor normal_tensor(ad::Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng);
  return t;
}

Var dense(const ad::BoundParameters& p, const std::string& name, const Var& x) {
  return op::add_row(op::matmul(x, ad::get(p, name + "/weight")), ad::get(p, name + "/bias"));
}

}  // namespace

void DetectorConfig::validate() const {
  if (image_size <= 0 || image_size % stride() != 0) throw Error(ErrorKind::Config, "detector image size must be a positive multiple of 4");
  if (stage_channels.size() != std::size(kStages)) throw Error(ErrorKind::Config, "detector needs exactly three stage widths");
  if (feature_dim == 0 || landmark_count() == 0) throw Error(ErrorKind::Config, "detector feature and landmark counts must be positive");
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "soft-argmax temperature must be positive");
}

ad::ParameterSet init_detector(const DetectorConfig& config, std::uint64_t seed, bool zero_head) {
  config.validate();
  std::mt19937_64 rng(seed);
  ad::ParameterSet p;
  std::size_t in = static_cast<std::size_t>(config.channels);
  for (std::size_t s = 0; s < std::size(kStages); ++s) {
    const std::size_t fan_in = kStages[s].kernel * kStages[s].kernel * in;
    const std::string name = "detector/conv" + std::to_string(s + 1);
    p[name + "/weight"] = normal_tensor({fan_in, config.stage_channels[s]}, std::sqrt(2.0 / fan_in), rng);
    p[name + "/bias"] = Tensor({config.stage_channels[s]}, 0.01);
    in = config.stage_channels[s];
  }
  p["detector/feature/weight"] = normal_tensor({in, config.feature_dim}, std::sqrt(2.0 / in), rng);
  p["detector/feature/bias"] = Tensor({config.feature_dim}, 0.01);
  const std::size_t k = config.heatmap_channels();
  p["detector/head/weight"] = zero_head ? Tensor({config.feature_dim, k}, 0.0)
                                        : normal_tensor({config.feature_dim, k}, 0.1 / std::sqrt(static_cast<double>(config.feature_dim)), rng);
  p["detector/head/bias"] = Tensor({k}, 0.0);
  return p;
}

Tensor image_tensor(const Image& image) {
  const std::size_t hw = static_cast<std::size_t>(image.height) * image.width;
  const auto c = static_cast<std::size_t>(image.channels);
  Tensor t({hw, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) t[i * c + ch] = image.data[ch * hw + i];
  return t;
}

Var soft_argmax(const Var& channel, std::size_t h, std::size_t w, double temperature) {
  if (channel.size() != h * w) throw Error(ErrorKind::Shape, "soft_argmax: channel of " + ad::to_string(channel.shape()) + " is not " + std::to_string(h) + "x" + std::to_string(w));
  ad::Tape& tape = channel.tape();
  const Var p = op::softmax(op::scale(op::reshape(channel, {h * w}), 1.0 / temperature));
  Tensor grid({h * w, 2});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      grid.at(y * w + x, 0) = static_cast<double>(x);
      grid.at(y * w + x, 1) = static_cast<double>(y);
    }
  return op::reshape(op::matmul(op::reshape(p, {1, h * w}), tape.constant(std::move(grid))), {2});
}

DetectorOutput detector_forward(const DetectorConfig& config, const ad::BoundParameters& params, const Var& image) {
  const auto size = static_cast<std::size_t>(config.image_size);
  if (image.value().rank() != 2 || image.value().rows() != size * size || image.value().cols() != static_cast<std::size_t>(config.channels))
    throw Error(ErrorKind::Shape, "detector expects a (" + std::to_string(size * size) + ", " + std::to_string(config.channels) +
                                      ") image tensor, got " + ad::to_string(image.shape()));
  Var x = image;
  std::size_t h = size, w = size;
  for (std::size_t s = 0; s < std::size(kStages); ++s) {
    const Stage& st = kStages[s];
    const Var cols = op::im2col(x, h, w, st.kernel, st.stride, st.pad);
    h = (h + 2 * st.pad - st.kernel) / st.stride + 1;
    w = (w + 2 * st.pad - st.kernel) / st.stride + 1;
    x = op::relu(dense(params, "detector/conv" + std::to_string(s + 1), cols));
  }
  DetectorOutput out;
  out.features = op::relu(dense(params, "detector/feature", x));
  out.logits = dense(params, "detector/head", out.features);
  const Var scaled = op::scale(op::transpose(out.logits), 1.0 / config.temperature);
  out.heatmaps = op::softmax(scaled);
  Tensor grid({h * w, 2});
  const int stride = config.stride();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t c = 0; c < w; ++c) {
      grid.at(y * w + c, 0) = grid_to_pixel(static_cast<double>(c), stride);
      grid.at(y * w + c, 1) = grid_to_pixel(static_cast<double>(y), stride);
    }
  const Var all = op::matmul(out.heatmaps, image.tape().constant(std::move(grid)));
  // The background channel is the last row; it gets no coordinate.
  out.keypoints = op::reshape(op::slice(all, 0, 2 * config.landmark_count()), {config.landmark_count(), 2});
  return out;
}

Detection detect(const DetectorConfig& config, const ad::ParameterSet& params, const Image& image) {
  if (image.channels != config.channels || image.height != config.image_size || image.width != config.image_size)
    throw Error(ErrorKind::Shape, "image is " + std::to_string(image.channels) + "x" + std::to_string(image.height) + "x" +
                                      std::to_string(image.width) + ", detector expects " + std::to_string(config.channels) + "x" +
                                      std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
  ad::Tape tape;
  const auto bound = ad::bind(tape, params, false);
  const DetectorOutput out = detector_forward(config, bound, tape.constant(image_tensor(image)));
  Detection d;
  d.heatmaps = out.heatmaps.value();
  d.features = out.features.value();
  const Tensor& kp = out.keypoints.value();
  for (std::size_t k = 0; k < config.landmark_count(); ++k) {
    const Vec2 p(kp.at(k, 0), kp.at(k, 1));
    (k < config.primary_count ? d.pose.primary : d.pose.secondary).push_back(p);
    (k < config.primary_count ? d.pose.primary_visible : d.pose.secondary_visible).push_back(true);
  }
  return d;
}

Var sample_feature(const Var& features, std::size_t h, std::size_t w, int stride, const Var& x, bool* out_of_bounds) {
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.rows() != h * w) throw Error(ErrorKind::Shape, "sample_feature: feature map " + ad::to_string(fv.shape()) + " is not " + std::to_string(h) + "x" + std::to_string(w));
  if (x.size() != 2) throw Error(ErrorKind::Shape, "sample_feature: position must be a 2-vector, got " + ad::to_string(x.shape()));
  const std::size_t n = fv.cols();
  const double ux = pixel_to_grid(x.value()[0], stride), uy = pixel_to_grid(x.value()[1], stride);
  const double cx = std::clamp(ux, 0.0, static_cast<double>(w - 1));
  const double cy = std::clamp(uy, 0.0, static_cast<double>(h - 1));
  const bool oob = cx != ux || cy != uy;
  if (out_of_bounds) *out_of_bounds = oob;
  // Corner cell (x0, y0) and weights; on the last row/column the upper corner
  // collapses onto the lower one with zero weight.
  const auto x0 = std::min(static_cast<std::size_t>(std::floor(cx)), w > 1 ? w - 2 : 0);
  const auto y0 = std::min(static_cast<std::size_t>(std::floor(cy)), h > 1 ? h - 2 : 0);
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = cx - static_cast<double>(x0), ay = cy - static_cast<double>(y0);
  const std::size_t c00 = y0 * w + x0, c01 = y0 * w + x1, c10 = y1 * w + x0, c11 = y1 * w + x1;
  const double w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay), w10 = (1 - ax) * ay, w11 = ax * ay;
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i)
    out[i] = w00 * fv.at(c00, i) + w01 * fv.at(c01, i) + w10 * fv.at(c10, i) + w11 * fv.at(c11, i);
  const bool clamp_x = cx != ux, clamp_y = cy != uy;
  const ad::NodeId fid = features.id(), xid = x.id();
  return features.tape().record(std::move(out), {fid, xid}, [=](const ad::Tape& tape, ad::NodeId, const Tensor& g, ad::GradSink& sink) {
    const Tensor& f = tape.value(fid);
    if (sink.wants(fid)) {
      Tensor& gf = sink.buffer(fid);
      for (std::size_t i = 0; i < n; ++i) {
        gf.at(c00, i) += w00 * g[i];
        gf.at(c01, i) += w01 * g[i];
        gf.at(c10, i) += w10 * g[i];
        gf.at(c11, i) += w11 * g[i];
      }
    }
    if (sink.wants(xid)) {
      double dax = 0.0, day = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dax += g[i] * ((1 - ay) * (f.at(c01, i) - f.at(c00, i)) + ay * (f.at(c11, i) - f.at(c10, i)));
        day += g[i] * ((1 - ax) * (f.at(c10, i) - f.at(c00, i)) + ax * (f.at(c11, i) - f.at(c01, i)));
      }
      Tensor& gx = sink.buffer(xid);
      if (!clamp_x) gx[0] += dax / stride;
      if (!clamp_y) gx[1] += day / stride;
    }
  });
}

}  // namespace seclm
