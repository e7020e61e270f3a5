#pragma once

#include <stdexcept>
#include <string>

namespace lht {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A kernel produced NaN or Inf, or a zero-norm vector reached a normalizer.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid strategy / CLI configuration. Maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or inconsistent input data (images, label maps, sample lists).
/// Maps to exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

enum class ContainerErrc {
  io,
  malformed,
  unsupported_version,
  checksum,
  missing_tensor,
  shape_mismatch,
};

/// Failure while reading or validating a `.lhtw` container.
class ContainerError : public DataError {
 public:
  ContainerError(ContainerErrc code, std::string message,
                 std::string tensor = {})
      : DataError(std::move(message)), code_(code), tensor_(std::move(tensor)) {}

  ContainerErrc code() const noexcept { return code_; }
  /// Name of the offending tensor, empty when not tensor-specific.
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  ContainerErrc code_;
  std::string tensor_;
};

}  // namespace lht
