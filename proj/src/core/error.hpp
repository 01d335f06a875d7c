#pragma once

#include <stdexcept>
#include <string>

namespace protoedit {

enum class ErrorCode {
  kInvalidArgument = 1,
  kIo = 2,
  kFormat = 3,
  kVersion = 4,
  kNumeric = 5,
  kState = 6,
  kInternal = 7,
};

// Every failure raised by the core library. The C API maps `code()` onto
// its status enum and `what()` onto the last-error string.
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

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::kInvalidArgument, message);
}

}  // namespace protoedit
