#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tumorkit {

// Interleaved H x W x C intensity grid. Intensities start in the source bit
// range [0, max_value] and are mapped to [0, 1] by normalize().
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  float max_value = 255.0f;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c = 1, float fill = 0.0f, float max_rep = 255.0f)
      : height(h), width(w), channels(c), max_value(max_rep),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

  float& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// H x W grid with values in {0, 1}.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

using SegMask = BinaryMask;

// Pre-threshold segmenter output; every value in [0, 1].
struct ProbMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ProbMap() = default;
  ProbMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;
};

}  // namespace tumorkit
