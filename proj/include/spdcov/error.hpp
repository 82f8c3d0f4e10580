#pragma once

#include <stdexcept>
#include <string>

namespace spdcov {

/// Base of every error raised by the library. The kind maps onto the CLI
/// exit codes: usage errors exit with 1, data errors with 2 and numerical
/// failures with 3.
class Error : public std::runtime_error {
 public:
  enum class Kind { Usage = 1, Data = 2, Numerical = 3 };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  Kind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(Kind::Usage, what) {}
};

/// Malformed input: wrong shapes, bad files, invalid labels, empty classes.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Kind::Data, what) {}
};

class DimensionMismatch : public DataError {
 public:
  DimensionMismatch(const std::string& context, long expected, long actual)
      : DataError(context + ": dimension mismatch (expected " + std::to_string(expected) +
                  ", got " + std::to_string(actual) + ")") {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(Kind::Numerical, what) {}
};

class OverflowError : public NumericalError {
 public:
  explicit OverflowError(const std::string& what) : NumericalError(what) {}
};

}  // namespace spdcov
