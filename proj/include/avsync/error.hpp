// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace avsync {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value, probability, count or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Index or window outside the data it refers to.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation contract (non-scalar backward, bad label, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }
  /// Same error with `prefix` (typically a file name) put in front.
  FormatError prefixed(const std::string& prefix) const { return FormatError(prefix + detail_, offset_); }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

}  // namespace avsync
