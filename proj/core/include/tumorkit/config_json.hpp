#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tumorkit/augment.hpp"
#include "tumorkit/classifier.hpp"
#include "tumorkit/dataset.hpp"
#include "tumorkit/preprocess.hpp"
#include "tumorkit/segmentation.hpp"
#include "tumorkit/training.hpp"

namespace tumorkit {

// Every parser rejects unknown keys and wrong types with a ConfigError that
// names the offending key. Missing keys keep their defaults.
CnnConfig cnn_config_from_json(const nlohmann::json& j);
CompoundScaleConfig compound_scale_from_json(const nlohmann::json& j);
ScaledDims scaled_dims_from_json(const nlohmann::json& j);
UNetConfig unet_config_from_json(const nlohmann::json& j);
AugmentConfig augment_config_from_json(const nlohmann::json& j);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);
SplitSpec split_spec_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const CnnConfig& c);
nlohmann::ordered_json to_json(const ScaledDims& d);
nlohmann::ordered_json to_json(const UNetConfig& c);
nlohmann::ordered_json to_json(const AugmentConfig& c);
nlohmann::ordered_json to_json(const PreprocessConfig& c);
nlohmann::ordered_json to_json(const SplitSpec& s);
nlohmann::ordered_json to_json(const TrainConfig& c);

// {"type": "baseline_cnn" | "scaled", ...fields}
nlohmann::ordered_json arch_to_json(const ClassifierArch& arch);
ClassifierArch arch_from_json(const nlohmann::json& j);

enum class ModelChoice { baseline_cnn, scaled, both };

struct RunConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path output_dir = "runs";
  SplitSpec split;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  ModelChoice model = ModelChoice::baseline_cnn;
  CnnConfig cnn;
  CompoundScaleConfig compound_scale;
  UNetConfig unet;
  TrainConfig train;
  // Hyperparameters for the segment task; falls back to train when absent.
  std::optional<TrainConfig> segment_train;

  const TrainConfig& segmenter_train() const { return segment_train ? *segment_train : train; }

  void validate() const;
};

// Parses a run config. cnn.input_size and unet.input_size default to
// preprocess.target_size when not given explicitly; train.augment is the
// top-level augment block. Relative paths resolve against base_dir, and
// dataset_root must exist.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
// Throws ConfigError for unreadable files or malformed JSON.
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& c);

// SHA-256 hex of the canonical serialized config.
std::string config_digest(const RunConfig& c);

}  // namespace tumorkit
