#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tumorkit/image.hpp"
#include "tumorkit/nn/parameters.hpp"
#include "tumorkit/nn/tape.hpp"
#include "tumorkit/tumor_class.hpp"

namespace tumorkit {

struct ConvBlockSpec {
  int filters = 16;
  int kernel = 3;
  bool pool = true;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct CnnConfig {
  std::vector<ConvBlockSpec> conv_blocks = {{16, 3, true}, {32, 3, true}, {64, 3, true}};
  int fc_width = 128;
  int num_classes = kNumClasses;
  int input_size = 256;

  // Throws ConfigError, naming the offending block when pooling would shrink
  // the feature map to nothing.
  void validate() const;

  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

struct FeatureDims {
  int channels;
  int height;
  int width;

  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

// Shape entering the fully connected stage.
FeatureDims cnn_feature_dims(const CnnConfig& config);

struct CompoundScaleConfig {
  double phi = 0.0;
  double alpha = 1.2;   // depth
  double beta = 1.1;    // width
  double gamma = 1.15;  // resolution
  int base_depth = 7;
  int base_width = 16;
  int base_resolution = 224;

  // alpha * beta^2 * gamma^2
  double flops_factor() const { return alpha * beta * beta * gamma * gamma; }
  // Requires phi >= 0, multipliers > 1, factor within [1.9, 2.1], positive bases.
  void validate() const;
};

struct ScaledDims {
  int depth = 7;
  int width = 16;
  int resolution = 224;

  friend bool operator==(const ScaledDims&, const ScaledDims&) = default;
};

// depth = round(base_depth * alpha^phi), width = round(base_width * beta^phi),
// resolution = base_resolution * gamma^phi rounded to the nearest multiple of 16.
ScaledDims compound_scale(const CompoundScaleConfig& config);

// One inverted-residual block of the scaled network.
struct MbBlockSpec {
  int in_channels;
  int out_channels;
  int expand_ratio;
  int stride;
  int se_channels;
};

// Block list derived from ScaledDims: four stages with channels width * 2^s,
// the depth spread evenly over stages (extra blocks go to later stages).
std::vector<MbBlockSpec> scaled_block_plan(const ScaledDims& dims);

using ClassifierArch = std::variant<CnnConfig, ScaledDims>;

struct Probabilities {
  std::array<double, kNumClasses> values{};

  double sum() const { return values[0] + values[1] + values[2] + values[3]; }
  friend bool operator==(const Probabilities&, const Probabilities&) = default;
};

class ClassifierModel {
 public:
  // Both builders are deterministic in (config, seed).
  static ClassifierModel baseline(const CnnConfig& config, std::uint64_t seed);
  static ClassifierModel scaled(const ScaledDims& dims, std::uint64_t seed);
  static ClassifierModel from_arch(const ClassifierArch& arch, std::uint64_t seed);

  const ClassifierArch& arch() const { return arch_; }
  std::string arch_name() const;
  int input_resolution() const;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  // Name prefix of the output layer ("logits.weight", "logits.bias").
  static constexpr const char* kOutputLayer = "logits";

  // Batch forward: input [N, 1, R, R] -> logits [N, 4]. Mutable params are
  // needed because the tape records gradients into them.
  nn::Var forward(nn::Tape& tape, nn::Var input);

  std::array<float, kNumClasses> logits(const Image& preprocessed) const;

 private:
  ClassifierModel() = default;
  ClassifierArch arch_;
  nn::ParameterSet params_;
};

// Converts a preprocessed single-channel image into a [1, 1, H, W] tensor.
nn::Tensor image_to_tensor(const Image& image);

// Numerically stable normalized exponential.
Probabilities softmax(std::span<const float> logits);

// Forward pass + softmax. Throws ArgumentError on a resolution mismatch.
Probabilities classify(const ClassifierModel& model, const Image& preprocessed);

// Argmax over the fixed class order; ties go to the lowest index.
std::pair<TumorClass, double> predict_class(const Probabilities& p);

}  // namespace tumorkit
