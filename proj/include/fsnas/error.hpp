#pragma once

#include <stdexcept>
#include <string>

namespace fsnas {

enum class ErrorCode {
  Usage,       // bad call / CLI misuse
  Config,      // inconsistent configuration
  Dimension,   // tensor shape mismatch
  Capacity,    // slice exceeds allocated capacity
  Input,       // invalid runtime input (labels, values)
  Parse,       // malformed encoded architecture / config text
  Format,      // malformed binary file
  State,       // operation not valid in current state
  Degenerate,  // statistic undefined for this input
  Io,          // filesystem failure
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::Usage: return "usage";
    case ErrorCode::Config: return "config";
    case ErrorCode::Dimension: return "dimension";
    case ErrorCode::Capacity: return "capacity";
    case ErrorCode::Input: return "input";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Format: return "format";
    case ErrorCode::State: return "state";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

inline void check(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) raise(code, msg);
}

}  // namespace fsnas
