#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lakegrid {

enum class ErrorKind {
  InvalidSpec,
  Input,
  Contract,
  NotFound,
  Conflict,
  Policy,
  Validation,
  Transport,
  Security,
  Connectivity,
  Packaging,
  Harness,
  Internal,
};

std::string_view to_string(ErrorKind kind);

/// Base exception for every failure raised by the library. The kind decides
/// how callers map it (HTTP status, exit code, retry).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lakegrid
