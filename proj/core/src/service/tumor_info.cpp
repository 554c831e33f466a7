#include "tumorkit/service/tumor_info.hpp"

#include <fstream>

#include "tumorkit/error.hpp"

namespace tumorkit::service {

TumorInfoCatalog TumorInfoCatalog::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("tumor info content must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!parse_tumor_class(key)) throw ConfigError("tumor info names unknown class '" + key + "'");
  }
  TumorInfoCatalog cat;
  for (TumorClass c : kClassOrder) {
    const std::string name(to_string(c));
    if (!j.contains(name)) throw ConfigError("tumor info lacks an entry for '" + name + "'");
    const auto& e = j.at(name);
    if (!e.is_object()) throw ConfigError("tumor info entry '" + name + "' must be an object");
    TumorInfoEntry entry;
    entry.tumor_class = c;
    std::pair<const char*, std::string*> sections[] = {
        {"overview", &entry.overview}, {"causes", &entry.causes},
        {"symptoms", &entry.symptoms}, {"treatments", &entry.treatments}};
    for (const auto& [key, value] : e.items()) {
      bool known = false;
      for (const auto& s : sections) known = known || key == s.first;
      if (!known) throw ConfigError("tumor info entry '" + name + "' has unknown section '" + key + "'");
    }
    for (auto& [key, out] : sections) {
      if (!e.contains(key) || !e.at(key).is_string() || e.at(key).get<std::string>().empty()) {
        throw ConfigError("tumor info entry '" + name + "' needs a non-empty '" + key + "' section");
      }
      *out = e.at(key).get<std::string>();
    }
    cat.entries_[static_cast<std::size_t>(class_index(c))] = std::move(entry);
  }
  return cat;
}

TumorInfoCatalog TumorInfoCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read tumor info file '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("tumor info file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::optional<TumorInfoEntry> TumorInfoCatalog::find(std::string_view name) const {
  const auto c = parse_tumor_class(name);
  if (!c) return std::nullopt;
  return at(*c);
}

nlohmann::ordered_json to_json(const TumorInfoEntry& e) {
  nlohmann::ordered_json j;
  j["class"] = std::string(to_string(e.tumor_class));
  j["overview"] = e.overview;
  j["causes"] = e.causes;
  j["symptoms"] = e.symptoms;
  j["treatments"] = e.treatments;
  return j;
}

}  // namespace tumorkit::service
