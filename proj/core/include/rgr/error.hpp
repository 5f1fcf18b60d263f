#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rgr {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidCorpus,
  kInvalidFeature,
  kDimensionError,
  kCapacityExceeded,
  kLengthError,
  kEmptyHistory,
  kInvalidConfig,
  kFormatError,
  kDigestMismatch,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as rgr::Error. The code is stable and
// machine-readable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidCorpus: return "InvalidCorpus";
    case ErrorCode::kInvalidFeature: return "InvalidFeature";
    case ErrorCode::kDimensionError: return "DimensionError";
    case ErrorCode::kCapacityExceeded: return "CapacityExceeded";
    case ErrorCode::kLengthError: return "LengthError";
    case ErrorCode::kEmptyHistory: return "EmptyHistory";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kDigestMismatch: return "DigestMismatch";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rgr
