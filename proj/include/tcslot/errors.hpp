#pragma once

#include <stdexcept>
#include <string>

namespace tcslot {

// Failure categories. The CLI maps each one to its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a centerline cannot be fitted (all samples at one depth).
class DegenerateGeometryError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace tcslot
