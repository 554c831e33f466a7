#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "tumorkit/tumor_class.hpp"

namespace tumorkit::service {

struct TumorInfoEntry {
  TumorClass tumor_class = TumorClass::glioma;
  std::string overview;
  std::string causes;
  std::string symptoms;
  std::string treatments;
};

// One entry per class, loaded once from an editable JSON content file:
//   {"glioma": {"overview": ..., "causes": ..., "symptoms": ..., "treatments": ...}, ...}
class TumorInfoCatalog {
 public:
  // Throws ConfigError when a class is missing, a section is empty, or a key is unknown.
  static TumorInfoCatalog from_json(const nlohmann::json& j);
  static TumorInfoCatalog load(const std::filesystem::path& path);

  const TumorInfoEntry& at(TumorClass c) const { return entries_[static_cast<std::size_t>(class_index(c))]; }
  std::optional<TumorInfoEntry> find(std::string_view name) const;

 private:
  std::array<TumorInfoEntry, kNumClasses> entries_;
};

nlohmann::ordered_json to_json(const TumorInfoEntry& e);

}  // namespace tumorkit::service
