#pragma once

#include <cstdint>
#include <optional>

#include "tumorkit/image.hpp"
#include "tumorkit/nn/parameters.hpp"
#include "tumorkit/nn/tape.hpp"

namespace tumorkit {

struct UNetConfig {
  int levels = 4;
  int base_filters = 16;
  int input_size = 256;

  // input_size divisible by 2^levels, levels >= 1, base_filters >= 1.
  void validate() const;
  int bottleneck_size() const { return input_size >> levels; }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

// U-Net: each contracting level applies two 3x3 conv+ReLU layers and a 2x2
// max pool, doubling channels per level; the expansive path upsamples with
// 2x2 transposed convolutions, concatenates the same-level contracting
// features and applies two more conv+ReLU layers. A 1x1 conv and sigmoid
// produce the single-channel tumor probability.
class SegModel {
 public:
  static SegModel build(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  static constexpr const char* kHeadLayer = "head";

  // [N, 1, S, S] -> pre-sigmoid logits [N, 1, S, S]. `dropped_skip` replaces
  // the skip features of that level with zeros; used to check wiring.
  nn::Var forward_logits(nn::Tape& tape, nn::Var input, std::optional<int> dropped_skip = std::nullopt);

  ProbMap predict(const Image& preprocessed, std::optional<int> dropped_skip = std::nullopt) const;

 private:
  SegModel() = default;
  UNetConfig config_;
  nn::ParameterSet params_;
};

inline SegModel build_unet(const UNetConfig& config, std::uint64_t seed = 0) {
  return SegModel::build(config, seed);
}

// Throws ArgumentError when the image is not input_size x input_size.
ProbMap segment(const SegModel& model, const Image& preprocessed);

// 1 where map >= tau (inclusive). tau must lie in (0, 1).
SegMask threshold_mask(const ProbMap& map, double tau = 0.5);

inline constexpr double kDiceEps = 1e-7;

// (2 |pred & truth| + eps) / (|pred| + |truth| + eps); 1 for two empty masks.
double dice(const SegMask& pred, const SegMask& truth);

}  // namespace tumorkit
