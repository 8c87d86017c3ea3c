#pragma once

#include <stdexcept>
#include <string>

namespace sdmim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or array dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range or inconsistent with another one.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A forward value or loss became NaN or infinite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint is malformed, from another format version, or does not match the model.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace sdmim
