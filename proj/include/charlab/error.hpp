#pragma once

#include <stdexcept>
#include <string>

namespace charlab {

enum class ErrorKind {
  kInvalidArgument,
  kInvalidK,
  kInfeasibleUniqueness,
  kUnknownCharacter,
  kOutOfRange,
  kMalformedFile,
  kVersionMismatch,
  kInvariantViolation,
  kInvalidParameter,
  kNoWordTokens,
  kContextOverflow,
  kNumericFailure,
  kEmptyInput,
  kInsufficientData,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for every domain error; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace charlab
