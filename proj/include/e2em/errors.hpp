#pragma once

#include <stdexcept>
#include <string>

namespace e2em {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (checkpoint, IDX, CIFAR-10, ensemble table).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Input data is well-formed but semantically invalid (e.g. label out of range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace e2em
