#pragma once

#include <stdexcept>
#include <string>

namespace cdisco {

enum class ErrorCode {
  kShape,
  kInvalidArgument,
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kMissingFile,
  kSchema,
  kValidation,
  kNotFound,
  kNumerical,
};

const char* error_code_name(ErrorCode code);

// Every failure raised by the engine carries a code so callers (the CLI in
// particular) can map it onto an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cdisco
