#pragma once

#include <cstddef>
#include <vector>

namespace seclm {

/// channels × height × width, row-major, values in [0, 1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Image&) const = default;
};

}  // namespace seclm
