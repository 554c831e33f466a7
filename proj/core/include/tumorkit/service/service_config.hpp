#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace tumorkit::service {

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path store_path = "tumorkit_store";
  std::optional<std::filesystem::path> classifier_checkpoint;
  std::optional<std::filesystem::path> segmenter_checkpoint;
  bool auto_create_patient = false;
  std::filesystem::path tumor_info_path;
  int worker_threads = 4;

  void validate() const;
};

// Strict parse (unknown keys are a ConfigError); relative paths resolve
// against base_dir.
ServiceConfig service_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
ServiceConfig load_service_config(const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

// Applies TUMORKIT_BIND_ADDRESS, TUMORKIT_PORT, TUMORKIT_STORE_PATH,
// TUMORKIT_CLASSIFIER_CHECKPOINT, TUMORKIT_SEGMENTER_CHECKPOINT,
// TUMORKIT_AUTO_CREATE_PATIENT and TUMORKIT_TUMOR_INFO. An empty checkpoint
// variable clears that checkpoint.
void apply_env_overrides(ServiceConfig& config, const EnvLookup& env);
void apply_env_overrides(ServiceConfig& config);

}  // namespace tumorkit::service
