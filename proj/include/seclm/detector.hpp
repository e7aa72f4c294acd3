#pragma once

// Toy landmark detector: three local conv stages (strides 2, 2, 1) to a
// quarter-resolution grid, a 1×1 stage to the shared feature map Φ and a 1×1
// head to P+S+1 heatmap channels (primaries, secondaries, background).
// Landmark coordinates come from a spatial soft-argmax per channel.

#include <cstdint>
#include <vector>

#include "seclm/autodiff.hpp"
#include "seclm/geometry.hpp"
#include "seclm/image.hpp"

namespace seclm {

struct DetectorConfig {
  int image_size = 64;
  int channels = 3;
  std::vector<std::size_t> stage_channels{16, 32, 32};
  std::size_t feature_dim = 32;
  std::size_t primary_count = 13;
  std::size_t secondary_count = 6;
  double temperature = 1.0;

  std::size_t landmark_count() const { return primary_count + secondary_count; }
  std::size_t heatmap_channels() const { return landmark_count() + 1; }
  int stride() const { return 4; }
  int heatmap_size() const { return image_size / stride(); }
  void validate() const;
};

/// Parameters live under "detector/...". `zero_head` zeroes the heatmap head
/// (uniform heatmaps); otherwise the head starts small and random so every
/// block receives gradient.
ad::ParameterSet init_detector(const DetectorConfig& config, std::uint64_t seed, bool zero_head = false);

/// Channels-last (H·W, C) tensor of an image.
ad::Tensor image_tensor(const Image& image);

struct DetectorOutput {
  ad::Var logits;     // (h·w, P+S+1) heatmap logits
  ad::Var heatmaps;   // (P+S+1, h·w) softmax over cells per channel
  ad::Var features;   // (h·w, n) penultimate activations Φ
  ad::Var keypoints;  // (P+S, 2) pixel coordinates, primaries first
};

DetectorOutput detector_forward(const DetectorConfig& config, const ad::BoundParameters& params, const ad::Var& image);

/// Plain evaluation without gradients.
struct Detection {
  ad::Tensor heatmaps;  // (P+S+1, h·w)
  ad::Tensor features;  // (h·w, n)
  Pose2D pose;
};
Detection detect(const DetectorConfig& config, const ad::ParameterSet& params, const Image& image);

/// Softmax over all cells of `channel` ((h·w) values, row-major h × w) at the
/// given temperature, then the expected (x, y) in grid coordinates.
ad::Var soft_argmax(const ad::Var& channel, std::size_t h, std::size_t w, double temperature = 1.0);

/// Grid coordinate u of pixel x: cell centres sit at pixel (u + 0.5)·stride − 0.5.
inline double pixel_to_grid(double x, int stride) { return (x + 0.5) / stride - 0.5; }
inline double grid_to_pixel(double u, int stride) { return (u + 0.5) * stride - 0.5; }

/// Bilinear sample of an (h·w, n) feature map at pixel position `x` (2-vector).
/// Positions outside the grid are clamped; `out_of_bounds` reports that.
/// Differentiable in both the features and the position.
ad::Var sample_feature(const ad::Var& features, std::size_t h, std::size_t w, int stride, const ad::Var& x,
                       bool* out_of_bounds = nullptr);

}  // namespace seclm
