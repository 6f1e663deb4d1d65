#pragma once

#include <stdexcept>
#include <string>

namespace patchrank {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or input contract. The CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A tensor or layer shape does not match what an operation expects.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Bad or missing data at runtime (unreadable files, single-class scores...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or divergence during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Broken internal invariant, e.g. a stale forward cache.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchrank
