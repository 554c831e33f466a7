#pragma once

#include <stdexcept>
#include <string>

namespace tumorkit {

// Invalid configuration: bad config values, architectures that cannot be built.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed an argument that violates an operation's precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dataset content does not satisfy what an operation needs (missing labels, masks).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint or other artifact could not be restored.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tumorkit
