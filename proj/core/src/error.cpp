#include "sen4x/error.hpp"

#include "sen4x/tensor.hpp"

namespace sen4x {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kData: return "data";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kBadVersion: return "bad-version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDtypeMismatch: return "dtype-mismatch";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNumeric: return "numeric";
  }
  return "unknown";
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace sen4x
