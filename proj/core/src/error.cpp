#include "latentlens/error.hpp"

namespace latentlens {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRejectedInput: return "rejected_input";
    case ErrorCode::kRejectedRecord: return "rejected_record";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kDegenerateQuery: return "degenerate_query";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kCorruptIndex: return "corrupt_index";
    case ErrorCode::kCorruptInput: return "corrupt_input";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kCrcMismatch: return "crc_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kNotFound: return "not_found";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace latentlens
