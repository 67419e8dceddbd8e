#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace archopt {

enum class ErrorKind {
  invalid_shape,
  invalid_config,
  invalid_state,
  invalid_input,
  numerical_error,
  not_found,
  infeasible_alignment,
  oracle_too_large,
  corrupt_checkpoint,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_shape: return "InvalidShape";
    case ErrorKind::invalid_config: return "InvalidConfig";
    case ErrorKind::invalid_state: return "InvalidState";
    case ErrorKind::invalid_input: return "InvalidInput";
    case ErrorKind::numerical_error: return "NumericalError";
    case ErrorKind::not_found: return "NotFound";
    case ErrorKind::infeasible_alignment: return "InfeasibleAlignment";
    case ErrorKind::oracle_too_large: return "OracleTooLarge";
    case ErrorKind::corrupt_checkpoint: return "CorruptCheckpoint";
  }
  return "Unknown";
}

/// Every failure in the library is reported through this type; `kind()`
/// identifies the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace archopt
