#include "tumorkit/tumor_class.hpp"

#include <string>

#include "tumorkit/error.hpp"

namespace tumorkit {

std::string_view to_string(TumorClass c) {
  switch (c) {
    case TumorClass::glioma:
      return "glioma";
    case TumorClass::meningioma:
      return "meningioma";
    case TumorClass::pituitary:
      return "pituitary";
    case TumorClass::no_tumor:
      return "no_tumor";
  }
  return "unknown";
}

std::optional<TumorClass> parse_tumor_class(std::string_view name) {
  for (auto c : kClassOrder) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

TumorClass tumor_class_from_string(std::string_view name) {
  if (auto c = parse_tumor_class(name)) return *c;
  throw ArgumentError("unknown tumor class '" + std::string(name) + "'");
}

TumorClass class_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw ArgumentError("class index " + std::to_string(index) + " out of range");
  }
  return kClassOrder[static_cast<std::size_t>(index)];
}

}  // namespace tumorkit
