// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/error.hpp"

namespace moevc {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kShape: return "shape mismatch";
    case ErrorCode::kRange: return "out of range";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kBadVersion: return "bad version";
    case ErrorCode::kTruncated: return "truncated payload";
    case ErrorCode::kZeroDimension: return "zero dimension";
    case ErrorCode::kZeroVariance: return "zero variance";
    case ErrorCode::kData: return "data";
    case ErrorCode::kNumeric: return "numeric";
  }
  return "unknown";
}

int exit_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kUsage:
    case ErrorCode::kConfig:
      return 1;
    case ErrorCode::kNumeric:
      return 3;
    default:
      return 2;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

}  // namespace moevc
