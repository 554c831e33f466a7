#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace tumorkit {

enum class TumorClass : int {
  glioma = 0,
  meningioma = 1,
  pituitary = 2,
  no_tumor = 3,
};

inline constexpr int kNumClasses = 4;

// Fixed output order of every classifier.
inline constexpr std::array<TumorClass, kNumClasses> kClassOrder = {
    TumorClass::glioma, TumorClass::meningioma, TumorClass::pituitary, TumorClass::no_tumor};

std::string_view to_string(TumorClass c);
std::optional<TumorClass> parse_tumor_class(std::string_view name);

// Throws ArgumentError on an unknown name.
TumorClass tumor_class_from_string(std::string_view name);

inline constexpr int class_index(TumorClass c) { return static_cast<int>(c); }
TumorClass class_from_index(int index);

}  // namespace tumorkit
