#include "tumorkit/service/service_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "tumorkit/error.hpp"

// Installed copy first, then the copy in the source tree for uninstalled builds.
#ifndef TUMORKIT_INSTALLED_TUMOR_INFO
#define TUMORKIT_INSTALLED_TUMOR_INFO "tumor_info.json"
#endif
#ifndef TUMORKIT_SOURCE_TUMOR_INFO
#define TUMORKIT_SOURCE_TUMOR_INFO "tumor_info.json"
#endif

namespace tumorkit::service {
namespace {

std::filesystem::path resolve(const std::string& s, const std::filesystem::path& base) {
  std::filesystem::path p(s);
  return p.is_absolute() ? p : base / p;
}

std::filesystem::path default_tumor_info() {
  std::error_code ec;
  const std::filesystem::path installed(TUMORKIT_INSTALLED_TUMOR_INFO);
  if (std::filesystem::is_regular_file(installed, ec)) return installed;
  return TUMORKIT_SOURCE_TUMOR_INFO;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + " must be a boolean, got '" + v + "'");
}

}  // namespace

void ServiceConfig::validate() const {
  if (bind_address.empty()) throw ConfigError("bind_address must not be empty");
  if (port < 0 || port > 65535) throw ConfigError("port must lie in [0, 65535]");
  if (store_path.empty()) throw ConfigError("store_path must not be empty");
  if (worker_threads < 1) throw ConfigError("worker_threads must be >= 1");
}

ServiceConfig service_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("service config must be a JSON object");
  static const std::set<std::string> known = {"bind_address",         "port",
                                              "store_path",           "classifier_checkpoint",
                                              "segmenter_checkpoint", "auto_create_patient",
                                              "tumor_info_path",      "worker_threads"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ServiceConfig c;
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  auto integer = [&](const char* key, int& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_integer()) throw ConfigError(std::string("config key '") + key + "' must be an integer");
    out = j.at(key).get<int>();
  };
  if (auto v = str("bind_address")) c.bind_address = *v;
  integer("port", c.port);
  integer("worker_threads", c.worker_threads);
  if (auto v = str("store_path")) c.store_path = resolve(*v, base_dir);
  if (auto v = str("classifier_checkpoint")) c.classifier_checkpoint = resolve(*v, base_dir);
  if (auto v = str("segmenter_checkpoint")) c.segmenter_checkpoint = resolve(*v, base_dir);
  if (auto v = str("tumor_info_path")) c.tumor_info_path = resolve(*v, base_dir);
  if (j.contains("auto_create_patient")) {
    if (!j.at("auto_create_patient").is_boolean()) throw ConfigError("config key 'auto_create_patient' must be a boolean");
    c.auto_create_patient = j.at("auto_create_patient").get<bool>();
  }
  c.validate();
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read service config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("service config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return service_config_from_json(j, path.parent_path().empty() ? "." : path.parent_path());
}

void apply_env_overrides(ServiceConfig& c, const EnvLookup& env) {
  if (auto v = env("TUMORKIT_BIND_ADDRESS")) c.bind_address = *v;
  if (auto v = env("TUMORKIT_PORT")) {
    try {
      std::size_t used = 0;
      c.port = std::stoi(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("TUMORKIT_PORT must be an integer, got '" + *v + "'");
    }
  }
  if (auto v = env("TUMORKIT_STORE_PATH")) c.store_path = *v;
  if (auto v = env("TUMORKIT_CLASSIFIER_CHECKPOINT")) {
    c.classifier_checkpoint = v->empty() ? std::nullopt : std::optional<std::filesystem::path>(*v);
  }
  if (auto v = env("TUMORKIT_SEGMENTER_CHECKPOINT")) {
    c.segmenter_checkpoint = v->empty() ? std::nullopt : std::optional<std::filesystem::path>(*v);
  }
  if (auto v = env("TUMORKIT_AUTO_CREATE_PATIENT")) c.auto_create_patient = parse_bool("TUMORKIT_AUTO_CREATE_PATIENT", *v);
  if (auto v = env("TUMORKIT_TUMOR_INFO")) c.tumor_info_path = *v;
  if (c.tumor_info_path.empty()) c.tumor_info_path = default_tumor_info();
  c.validate();
}

void apply_env_overrides(ServiceConfig& c) {
  apply_env_overrides(c, [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    return v ? std::optional<std::string>(v) : std::nullopt;
  });
}

}  // namespace tumorkit::service
