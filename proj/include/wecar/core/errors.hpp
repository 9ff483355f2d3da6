#pragma once

#include <stdexcept>
#include <string>

namespace wecar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for an op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace wecar
