#pragma once

#include <stdexcept>
#include <string>

namespace l2r {

enum class ErrorCode {
  kInvalidSize,
  kInvalidCapacity,
  kInvalidPattern,
  kInvalidInstance,
  kUnsupportedEdgeWeight,
  kParseError,
  kInvalidTour,
  kInvalidGamma,
  kShapeError,
  kEmptyAttention,
  kStateError,
  kNanGuard,
  kIncompatibleCheckpoint,
  kEmptyFeasible,
  kBatchError,
  kInvalidSolution,
  kSizeGuard,
  kInvalidReference,
  kInvalidConfig,
  kIoError,
  kInternal,
};

const char* to_string(ErrorCode code);

// All library failures are reported through this type; `code()` is the
// machine-checkable part, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace l2r
