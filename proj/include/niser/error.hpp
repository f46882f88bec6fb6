// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace niser {

/// Failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kUsage = 1,    // bad arguments or configuration
  kData = 2,     // unreadable / malformed / degenerate input data
  kNumeric = 3,  // non-finite values, dead embeddings, failed gradient check
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

/// Tensor shape violations are programming/data errors; reported as data errors.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

}  // namespace niser
