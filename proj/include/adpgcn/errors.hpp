#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adpgcn {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric / graph errors.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class NodeCountMismatch : public ShapeMismatch {
 public:
  using ShapeMismatch::ShapeMismatch;
};
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};
class NotScalarLoss : public Error {
 public:
  using Error::Error;
};
class GraphConsumed : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; `key()` names the offending setting.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& msg)
      : Error(key + ": " + msg), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};
class LabelLongerThanInput : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class ConfigMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Data / IO errors.
class DataError : public Error {
 public:
  using Error::Error;
};
class ParseError : public DataError {
 public:
  ParseError(std::size_t row, std::size_t col, const std::string& what)
      : DataError("parse error at row " + std::to_string(row) + ", column " +
                  std::to_string(col) + ": " + what),
        row(row),
        col(col) {}
  std::size_t row, col;
};
class MissingValue : public DataError {
 public:
  MissingValue(std::size_t row, std::size_t col)
      : DataError("missing value at row " + std::to_string(row) + ", column " +
                  std::to_string(col)),
        row(row),
        col(col) {}
  std::size_t row, col;
};
class NonMonotonicTimestamp : public DataError {
 public:
  explicit NonMonotonicTimestamp(std::size_t row)
      : DataError("timestamp at row " + std::to_string(row) +
                  " is not strictly increasing at the series interval"),
        row(row) {}
  std::size_t row;
};
class ConstantColumn : public DataError {
 public:
  explicit ConstantColumn(std::size_t col)
      : DataError("column " + std::to_string(col) + " is constant on the training split"),
        col(col) {}
  std::size_t col;
};
class SeriesTooShort : public DataError {
 public:
  using DataError::DataError;
};
class InvalidSplit : public ConfigError {
 public:
  explicit InvalidSplit(const std::string& msg) : ConfigError("fractions", msg) {}
};
class InvalidCoupling : public ConfigError {
 public:
  explicit InvalidCoupling(const std::string& msg) : ConfigError("couple", msg) {}
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};
class CorruptCheckpoint : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class FormatVersionMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Training hit a NaN/Inf loss.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::size_t epoch, std::size_t batch, const std::string& detail)
      : Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch) + ": " + detail),
        epoch(epoch),
        batch(batch) {}
  std::size_t epoch, batch;
};

}  // namespace adpgcn
