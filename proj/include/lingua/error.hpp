#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lingua {

enum class ErrorCode {
  format,
  geometry,
  duplicate_sample,
  empty,
  zero_vector,
  range,
  dim_mismatch,
  unbalanced,
  insufficient,
  unknown_language,
  language_set_mismatch,
  nonpositive,
  spec,
  usage,
  io,
};

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::format: return "E_FORMAT";
    case ErrorCode::geometry: return "E_GEOMETRY";
    case ErrorCode::duplicate_sample: return "E_DUPLICATE_SAMPLE";
    case ErrorCode::empty: return "E_EMPTY";
    case ErrorCode::zero_vector: return "E_ZERO_VECTOR";
    case ErrorCode::range: return "E_RANGE";
    case ErrorCode::dim_mismatch: return "E_DIM_MISMATCH";
    case ErrorCode::unbalanced: return "E_UNBALANCED";
    case ErrorCode::insufficient: return "E_INSUFFICIENT";
    case ErrorCode::unknown_language: return "E_UNKNOWN_LANGUAGE";
    case ErrorCode::language_set_mismatch: return "E_LANGUAGE_SET_MISMATCH";
    case ErrorCode::nonpositive: return "E_NONPOSITIVE";
    case ErrorCode::spec: return "E_SPEC";
    case ErrorCode::usage: return "E_USAGE";
    case ErrorCode::io: return "E_IO";
  }
  return "E_UNKNOWN";
}

// All library failures surface as this exception; `code()` is stable and
// maps onto CLI exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace lingua
