#include "l2r/error.hpp"

namespace l2r {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidSize: return "invalid-size";
    case ErrorCode::kInvalidCapacity: return "invalid-capacity";
    case ErrorCode::kInvalidPattern: return "invalid-pattern";
    case ErrorCode::kInvalidInstance: return "invalid-instance";
    case ErrorCode::kUnsupportedEdgeWeight: return "unsupported-edge-weight";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kInvalidTour: return "invalid-tour";
    case ErrorCode::kInvalidGamma: return "invalid-gamma";
    case ErrorCode::kShapeError: return "shape-error";
    case ErrorCode::kEmptyAttention: return "empty-attention-error";
    case ErrorCode::kStateError: return "state-error";
    case ErrorCode::kNanGuard: return "nan-guard";
    case ErrorCode::kIncompatibleCheckpoint: return "incompatible-checkpoint";
    case ErrorCode::kEmptyFeasible: return "empty-feasible";
    case ErrorCode::kBatchError: return "batch-error";
    case ErrorCode::kInvalidSolution: return "invalid-solution";
    case ErrorCode::kSizeGuard: return "size-guard";
    case ErrorCode::kInvalidReference: return "invalid-reference";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kIoError: return "io-error";
    case ErrorCode::kInternal: return "internal-error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace l2r
