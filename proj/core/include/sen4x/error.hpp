#pragma once

#include <stdexcept>
#include <string>

namespace sen4x {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorCode {
  kConfig,         // invalid configuration or arguments
  kData,           // missing/inconsistent input data
  kBadMagic,       // raster/checkpoint file does not start with the expected magic
  kBadVersion,     // unsupported container version
  kTruncated,      // header dims disagree with payload length
  kDtypeMismatch,  // stored element type differs from the requested one
  kShapeMismatch,  // tensor shapes disagree with a contract
  kIo,             // filesystem failure
  kNumeric,        // non-finite values during optimization
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace sen4x
