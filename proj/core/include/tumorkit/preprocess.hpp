#pragma once

#include "tumorkit/image.hpp"

namespace tumorkit {

enum class NormalizeMode { unit_range };

struct PreprocessConfig {
  int target_size = 256;
  NormalizeMode normalize_mode = NormalizeMode::unit_range;

  // target_size must be >= 32 and divisible by 16. Throws ConfigError.
  void validate() const;
};

// Bilinear resize to target_size x target_size with half-pixel centers.
// Channels are preserved. Same-size input is returned unchanged.
Image resize(const Image& image, int target_size);

// Nearest-neighbor resize for masks.
BinaryMask resize_mask(const BinaryMask& mask, int target_size);

// Maps [0, max_rep] to [0, 1]. Out-of-range values are clamped with a warning.
Image normalize(const Image& image, float max_rep);
inline Image normalize(const Image& image) { return normalize(image, image.max_value); }

// BT.601 luma for RGB input; single-channel input is returned as-is.
Image to_grayscale(const Image& image);

// Grayscale, resize and normalize: the input expected by every model.
Image prepare_model_input(const Image& raw, int size);

}  // namespace tumorkit
