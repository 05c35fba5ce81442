#include "charlab/error.hpp"

namespace charlab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kInvalidK: return "invalid K";
    case ErrorKind::kInfeasibleUniqueness: return "infeasible uniqueness";
    case ErrorKind::kUnknownCharacter: return "unknown character";
    case ErrorKind::kOutOfRange: return "out of range";
    case ErrorKind::kMalformedFile: return "malformed file";
    case ErrorKind::kVersionMismatch: return "version mismatch";
    case ErrorKind::kInvariantViolation: return "invariant violation";
    case ErrorKind::kInvalidParameter: return "invalid parameter";
    case ErrorKind::kNoWordTokens: return "no word tokens";
    case ErrorKind::kContextOverflow: return "context overflow";
    case ErrorKind::kNumericFailure: return "numeric failure";
    case ErrorKind::kEmptyInput: return "empty input";
    case ErrorKind::kInsufficientData: return "insufficient data";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

}  // namespace charlab
