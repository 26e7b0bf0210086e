// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef COLDPACK_ERROR_HPP
#define COLDPACK_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace coldpack {

// Stable error codes. The numeric values are part of the CLI contract
// (process exit status), so append only.
enum class ErrorCode : int {
  kInvalidArgument = 2,
  kIo = 3,
  kMalformedHeader = 4,
  kTruncated = 5,
  kDuplicateName = 6,
  kCorrupt = 7,
  kChecksumMismatch = 8,
  kOutOfOrder = 9,
  kOverflow = 10,
  kInfeasible = 11,
  kTooLarge = 12,
  kDimensionMismatch = 13,
  kCodeOutOfRange = 14,
  kNonFinite = 15,
  kMissingCost = 16,
  kDeadlock = 17,
  kEmptyInput = 18,
  kUsage = 19,
  kWorkerFailure = 20,
};

std::string_view error_code_name(ErrorCode code) noexcept;

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

}  // namespace coldpack

#endif  // COLDPACK_ERROR_HPP
