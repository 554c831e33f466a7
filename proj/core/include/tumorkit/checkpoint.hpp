#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tumorkit/classifier.hpp"
#include "tumorkit/segmentation.hpp"

namespace tumorkit {

// Layout, all integers little-endian:
//   magic "TKCKPT\r\n" | u32 version | u8 kind
//   u32 len + arch JSON | u32 len + metadata JSON | u32 tensor count
//   per tensor: u32 len + name | u8 dtype (0 = f32) | u32 ndim | u32 dims... | f32 payload
//   32-byte SHA-256 of everything before it
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint8_t { classifier = 1, segmenter = 2 };

struct ClassifierCheckpoint {
  ClassifierModel model;
  nlohmann::json metadata;
};

struct SegmenterCheckpoint {
  SegModel model;
  nlohmann::json metadata;
};

std::vector<std::uint8_t> encode_checkpoint(const ClassifierModel& model, const nlohmann::json& metadata = {});
std::vector<std::uint8_t> encode_checkpoint(const SegModel& model, const nlohmann::json& metadata = {});

// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const ClassifierModel& model,
                     const nlohmann::json& metadata = {});
void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                     const nlohmann::json& metadata = {});

// All decoders throw LoadError on bad magic, unsupported version, digest
// mismatch, truncation, wrong kind, or tensors that disagree with the arch.
// When expected is given, an arch that differs from it is also a LoadError
// naming the first differing field.
CheckpointKind peek_checkpoint_kind(std::span<const std::uint8_t> bytes);
ClassifierCheckpoint decode_classifier_checkpoint(std::span<const std::uint8_t> bytes,
                                                  const std::optional<ClassifierArch>& expected = std::nullopt);
SegmenterCheckpoint decode_segmenter_checkpoint(std::span<const std::uint8_t> bytes,
                                                const std::optional<UNetConfig>& expected = std::nullopt);

ClassifierCheckpoint load_classifier_checkpoint(const std::filesystem::path& path,
                                                const std::optional<ClassifierArch>& expected = std::nullopt);
SegmenterCheckpoint load_segmenter_checkpoint(const std::filesystem::path& path,
                                              const std::optional<UNetConfig>& expected = std::nullopt);

}  // namespace tumorkit
