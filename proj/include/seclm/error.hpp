#pragma once

#include <stdexcept>
#include <string>

namespace seclm {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  Config,        // bad flags, config values, unknown options
  Data,          // missing files, schema mismatches, malformed records
  Shape,         // tensor / landmark count mismatch
  Precondition,  // caller violated an operation's documented precondition
  Degenerate,    // geometric degeneracy (zero baseline, collinear frame, ...)
  Numerical,     // NaN / divergence during optimization
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Precondition: return "precondition violated";
    case ErrorKind::Degenerate: return "degenerate geometry";
    case ErrorKind::Numerical: return "numerical failure";
  }
  return "error";
}

/// Exit code contract: 0 success, 2 config error, 3 data error, 4 numerical failure.
inline int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data:
    case ErrorKind::Shape:
    case ErrorKind::Precondition: return 3;
    case ErrorKind::Degenerate:
    case ErrorKind::Numerical: return 4;
  }
  return 1;
}

}  // namespace seclm
