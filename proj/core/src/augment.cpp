#include "tumorkit/augment.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "tumorkit/error.hpp"

namespace tumorkit {
namespace {

struct InverseMap {
  double cx, cy;
  double cos_t, sin_t;
  double inv_zoom;
  bool flip;

  // Source coordinate of output pixel (x, y).
  std::pair<double, double> operator()(int x, int y) const {
    double dx = (x - cx) * inv_zoom;
    const double dy = (y - cy) * inv_zoom;
    if (flip) dx = -dx;
    return {cx + cos_t * dx + sin_t * dy, cy - sin_t * dx + cos_t * dy};
  }
};

InverseMap make_map(int height, int width, const AugmentDraw& draw) {
  const double theta = draw.angle_deg * std::numbers::pi / 180.0;
  return {(width - 1) / 2.0, (height - 1) / 2.0, std::cos(theta), std::sin(theta),
          1.0 / draw.zoom, draw.do_hflip};
}

inline float lerp(float a, float b, float t) { return a + t * (b - a); }

// Bilinear sample of one plane (element stride `stride`) with zero outside.
float sample(const float* plane, int height, int width, int stride, double sx, double sy) {
  if (sx <= -1.0 || sy <= -1.0 || sx >= width || sy >= height) return 0.0f;
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const auto fx = static_cast<float>(sx - x0);
  const auto fy = static_cast<float>(sy - y0);
  auto px = [&](int y, int x) -> float {
    if (x < 0 || y < 0 || x >= width || y >= height) return 0.0f;
    return plane[(static_cast<std::size_t>(y) * width + x) * stride];
  };
  const float top = lerp(px(y0, x0), px(y0, x0 + 1), fx);
  const float bottom = lerp(px(y0 + 1, x0), px(y0 + 1, x0 + 1), fx);
  return lerp(top, bottom, fy);
}

void warp_plane(const float* in, float* out, int height, int width, int stride,
                const InverseMap& map) {
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto [sx, sy] = map(x, y);
      out[(static_cast<std::size_t>(y) * width + x) * stride] = sample(in, height, width, stride, sx, sy);
    }
  }
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(rotation_max_deg >= 0.0 && rotation_max_deg <= 180.0)) {
    throw ConfigError("rotation_max_deg must lie in [0, 180]");
  }
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("hflip_prob must lie in [0, 1]");
  if (!(zoom_low > 0.0 && zoom_low <= 1.0 && zoom_high >= 1.0 && zoom_low <= zoom_high)) {
    throw ConfigError("zoom range must satisfy 0 < low <= 1 <= high");
  }
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.rotation_max_deg = 0.0;
  c.hflip_prob = 0.0;
  c.zoom_low = 1.0;
  c.zoom_high = 1.0;
  return c;
}

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng) {
  AugmentDraw d;
  d.angle_deg = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg);
  d.do_hflip = rng.bernoulli(config.hflip_prob);
  d.zoom = rng.uniform(config.zoom_low, config.zoom_high);
  return d;
}

std::pair<Image, std::optional<BinaryMask>> apply_augment(const Image& image,
                                                          const std::optional<BinaryMask>& mask,
                                                          const AugmentDraw& draw) {
  if (mask && (mask->height != image.height || mask->width != image.width)) {
    throw ArgumentError("mask dimensions do not match image dimensions");
  }
  if (!(draw.zoom > 0.0)) throw ArgumentError("zoom must be positive");
  const InverseMap map = make_map(image.height, image.width, draw);

  Image out(image.height, image.width, image.channels, 0.0f, image.max_value);
  for (int c = 0; c < image.channels; ++c) {
    warp_plane(image.data.data() + c, out.data.data() + c, image.height, image.width,
               image.channels, map);
  }

  std::optional<BinaryMask> out_mask;
  if (mask) {
    std::vector<float> plane(mask->data.begin(), mask->data.end());
    std::vector<float> warped(plane.size());
    warp_plane(plane.data(), warped.data(), mask->height, mask->width, 1, map);
    out_mask.emplace(mask->height, mask->width);
    for (std::size_t i = 0; i < warped.size(); ++i) out_mask->data[i] = warped[i] >= 0.5f ? 1 : 0;
  }
  return {std::move(out), std::move(out_mask)};
}

ScanRecord apply_augment(const ScanRecord& record, const AugmentDraw& draw) {
  auto [image, mask] = apply_augment(record.image, record.mask, draw);
  ScanRecord out;
  out.id = record.id;
  out.label = record.label;
  out.source_path = record.source_path;
  out.image = std::move(image);
  out.mask = std::move(mask);
  return out;
}

}  // namespace tumorkit
