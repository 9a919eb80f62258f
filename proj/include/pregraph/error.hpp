#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pregraph {

/// Contract violation by the caller (bad ids, bad shapes, bad radii).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent run configuration (e.g. negatives requested from a batch of one).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Supervised pre-training data overlaps downstream test graphs.
class LeakageError : public DataError {
 public:
  using DataError::DataError;
};

/// A forward value or loss became NaN/Inf.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ROC-AUC requested for single-class labels.
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class VersionMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class HashMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ShapeMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace pregraph
