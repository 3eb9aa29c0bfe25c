#pragma once

#include <stdexcept>
#include <string>

namespace cycletrack {

enum class ErrorCode {
  bad_magic,
  unsupported_version,
  dimension_mismatch,
  zero_vector,
  io_failure,
  empty_matrix,
  index_out_of_range,
  capacity_too_small,
  insertion_overflow,
  nothing_evictable,
  empty_bank,
  no_pairs,
  out_of_bounds,
  infeasible_spec,
  config_error,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::zero_vector: return "zero_vector";
    case ErrorCode::io_failure: return "io_failure";
    case ErrorCode::empty_matrix: return "empty_matrix";
    case ErrorCode::index_out_of_range: return "index_out_of_range";
    case ErrorCode::capacity_too_small: return "capacity_too_small";
    case ErrorCode::insertion_overflow: return "insertion_overflow";
    case ErrorCode::nothing_evictable: return "nothing_evictable";
    case ErrorCode::empty_bank: return "empty_bank";
    case ErrorCode::no_pairs: return "no_pairs";
    case ErrorCode::out_of_bounds: return "out_of_bounds";
    case ErrorCode::infeasible_spec: return "infeasible_spec";
    case ErrorCode::config_error: return "config_error";
  }
  return "unknown";
}

/// Library-wide exception. Carries a machine-checkable code plus a
/// human-readable message with context (path, field, sizes).
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace cycletrack
