// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moevc {

enum class ErrorCode {
  kUsage,
  kConfig,
  kShape,
  kRange,
  kIo,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kZeroDimension,
  kZeroVariance,
  kData,
  kNumeric,
};

const char* error_code_name(ErrorCode code) noexcept;

/// Process exit status for an error class: 1 usage, 2 data, 3 numeric.
int exit_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace moevc
