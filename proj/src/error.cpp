// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/error.hpp"

namespace coldpack {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMalformedHeader: return "malformed_header";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDuplicateName: return "duplicate_name";
    case ErrorCode::kCorrupt: return "corrupt";
    case ErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::kOutOfOrder: return "out_of_order";
    case ErrorCode::kOverflow: return "overflow";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kTooLarge: return "too_large";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kCodeOutOfRange: return "code_out_of_range";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kMissingCost: return "missing_cost";
    case ErrorCode::kDeadlock: return "deadlock";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kWorkerFailure: return "worker_failure";
  }
  return "unknown";
}

}  // namespace coldpack
