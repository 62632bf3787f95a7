#pragma once

#include <stdexcept>
#include <string>

namespace gar {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Inconsistent data (label out of range, empty dataset, count mismatch).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file; the message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an operation, or a diverging training run.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace gar
