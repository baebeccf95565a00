#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latentlens {

/// Failure categories shared by every module. Callers branch on the code;
/// the message is for humans.
enum class ErrorCode {
  kRejectedInput,
  kRejectedRecord,
  kDimensionMismatch,
  kDegenerateQuery,
  kConfiguration,
  kCorruptIndex,
  kCorruptInput,
  kBadMagic,
  kUnsupportedVersion,
  kCrcMismatch,
  kTruncated,
  kIo,
  kInfeasible,
  kNotFound,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace latentlens
