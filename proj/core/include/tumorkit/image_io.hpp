#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tumorkit/image.hpp"

namespace tumorkit {

// Decodes PNG/JPEG bytes. Grayscale stays single-channel, color becomes RGB.
// 16-bit PNGs keep their range (max_value = 65535). Returns nullopt when the
// bytes are not a decodable image.
std::optional<Image> decode_image(std::span<const std::uint8_t> bytes);
std::optional<Image> read_image(const std::filesystem::path& path);

// Single-channel 8-bit decode; any nonzero pixel becomes 1.
std::optional<BinaryMask> read_mask(const std::filesystem::path& path);

// 8-bit single-channel PNG, 0 = background, 255 = tumor.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask);

// 8-bit PNG of an image in its source range (values clamped to [0, 255]
// after scaling max_value to 255).
std::vector<std::uint8_t> encode_image_png(const Image& image);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace tumorkit
