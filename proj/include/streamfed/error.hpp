#pragma once

#include <stdexcept>
#include <string>

namespace streamfed {

/// Failure categories; the CLI maps them onto process exit codes.
enum class ErrorKind {
  Config = 2,
  Numeric = 3,
  Acceptance = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

/// Precondition violation in library code (bad dimensions, empty memory, ...).
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorKind::Config, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::Numeric, what) {}
};

}  // namespace streamfed
