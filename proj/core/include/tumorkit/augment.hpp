#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "tumorkit/dataset.hpp"
#include "tumorkit/image.hpp"
#include "tumorkit/rng.hpp"

namespace tumorkit {

struct AugmentConfig {
  double rotation_max_deg = 15.0;
  double hflip_prob = 0.5;
  double zoom_low = 0.9;
  double zoom_high = 1.1;
  std::uint64_t seed = 0;

  // Throws ConfigError when a range is invalid.
  void validate() const;

  // A config whose draws are always the identity transform.
  static AugmentConfig none();
};

// One sampled transform, shared between an image and its mask.
struct AugmentDraw {
  double angle_deg = 0.0;
  bool do_hflip = false;
  double zoom = 1.0;

  friend bool operator==(const AugmentDraw&, const AugmentDraw&) = default;
};

// Always consumes exactly three values from rng.
AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng);

// Rotation about the center (zero fill), then horizontal flip, then a central
// zoom (crop when zoom > 1, pad when zoom < 1). The three steps are composed
// into one inverse map and sampled once. The image is sampled bilinearly; the
// mask is sampled through the identical bilinear map and kept where the
// interpolated value is >= 0.5, so it stays binary and aligned with the image.
std::pair<Image, std::optional<BinaryMask>> apply_augment(const Image& image,
                                                          const std::optional<BinaryMask>& mask,
                                                          const AugmentDraw& draw);

// Record-level variant; id, label and source path ride along untouched.
ScanRecord apply_augment(const ScanRecord& record, const AugmentDraw& draw);

}  // namespace tumorkit
