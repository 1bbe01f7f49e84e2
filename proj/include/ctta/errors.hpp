#pragma once

#include <stdexcept>
#include <string>

namespace ctta {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: unknown identifiers, bad hyperparameters, shape contracts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data (label ranges, stream/model mismatches).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or degenerate numerics that cannot be recovered.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File-system failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctta
