#include "tumorkit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "tumorkit/error.hpp"

namespace tumorkit {
namespace {

struct AxisSample {
  int i0;
  int i1;
  float frac;
};

// Half-pixel-center source coordinate for output index i, clamped to the grid.
AxisSample axis_sample(int i, int in_len, int out_len) {
  const double scale = static_cast<double>(in_len) / out_len;
  double src = (i + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_len - 1));
  const int i0 = static_cast<int>(std::floor(src));
  const int i1 = std::min(i0 + 1, in_len - 1);
  return {i0, i1, static_cast<float>(src - i0)};
}

inline float lerp(float a, float b, float t) { return a + t * (b - a); }

}  // namespace

void PreprocessConfig::validate() const {
  if (target_size < 32 || target_size % 16 != 0) {
    throw ConfigError("target_size must be >= 32 and divisible by 16, got " +
                      std::to_string(target_size));
  }
}

Image resize(const Image& image, int target_size) {
  if (target_size <= 0) throw ArgumentError("resize target must be positive");
  if (image.empty()) throw ArgumentError("cannot resize an empty image");
  if (image.height == target_size && image.width == target_size) return image;

  Image out(target_size, target_size, image.channels, 0.0f, image.max_value);
  std::vector<AxisSample> xs(static_cast<std::size_t>(target_size));
  for (int x = 0; x < target_size; ++x) xs[x] = axis_sample(x, image.width, target_size);
  for (int y = 0; y < target_size; ++y) {
    const AxisSample sy = axis_sample(y, image.height, target_size);
    for (int x = 0; x < target_size; ++x) {
      const AxisSample& sx = xs[x];
      for (int c = 0; c < image.channels; ++c) {
        const float top = lerp(image.at(sy.i0, sx.i0, c), image.at(sy.i0, sx.i1, c), sx.frac);
        const float bottom = lerp(image.at(sy.i1, sx.i0, c), image.at(sy.i1, sx.i1, c), sx.frac);
        out.at(y, x, c) = lerp(top, bottom, sy.frac);
      }
    }
  }
  return out;
}

BinaryMask resize_mask(const BinaryMask& mask, int target_size) {
  if (target_size <= 0) throw ArgumentError("resize target must be positive");
  if (mask.data.empty()) throw ArgumentError("cannot resize an empty mask");
  if (mask.height == target_size && mask.width == target_size) return mask;

  auto nearest = [](int i, int in_len, int out_len) {
    const double src = (i + 0.5) * static_cast<double>(in_len) / out_len;
    return std::min(static_cast<int>(std::floor(src)), in_len - 1);
  };
  BinaryMask out(target_size, target_size);
  for (int y = 0; y < target_size; ++y) {
    const int sy = nearest(y, mask.height, target_size);
    for (int x = 0; x < target_size; ++x) {
      out.at(y, x) = mask.at(sy, nearest(x, mask.width, target_size));
    }
  }
  return out;
}

Image normalize(const Image& image, float max_rep) {
  if (!(max_rep > 0.0f)) throw ArgumentError("max_rep must be positive");
  Image out = image;
  out.max_value = 1.0f;
  std::size_t clamped = 0;
  for (float& v : out.data) {
    float n = v / max_rep;
    if (n < 0.0f || n > 1.0f) {
      n = std::clamp(n, 0.0f, 1.0f);
      ++clamped;
    }
    v = n;
  }
  if (clamped > 0) {
    spdlog::warn("normalize: clamped {} value(s) outside [0, {}]", clamped, max_rep);
  }
  return out;
}

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  Image out(image.height, image.width, 1, 0.0f, image.max_value);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (image.channels >= 3) {
        out.at(y, x) = 0.299f * image.at(y, x, 0) + 0.587f * image.at(y, x, 1) +
                       0.114f * image.at(y, x, 2);
      } else {
        out.at(y, x) = image.at(y, x, 0);
      }
    }
  }
  return out;
}

Image prepare_model_input(const Image& raw, int size) {
  return normalize(resize(to_grayscale(raw), size));
}

}  // namespace tumorkit
