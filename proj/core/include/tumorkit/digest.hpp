#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "tumorkit/nn/parameters.hpp"

namespace tumorkit {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);

// Digest over parameter names, shapes and raw float bits.
std::string params_digest(const nn::ParameterSet& params);

}  // namespace tumorkit
