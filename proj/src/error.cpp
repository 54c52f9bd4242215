#include "hbnn/error.hpp"

namespace hbnn {

const char *to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::InvalidShape: return "invalid-shape";
  case ErrorKind::EmptyInput: return "empty-input";
  case ErrorKind::ShapeMismatch: return "shape-mismatch";
  case ErrorKind::DegenerateNorm: return "degenerate-norm";
  case ErrorKind::UnsupportedBitwidth: return "unsupported-bitwidth";
  case ErrorKind::InvalidDistribution: return "invalid-distribution";
  case ErrorKind::InvalidInput: return "invalid-input";
  case ErrorKind::NumericFailure: return "numeric-failure";
  case ErrorKind::Usage: return "usage";
  case ErrorKind::Io: return "io";
  case ErrorKind::Format: return "format";
  }
  return "unknown";
}

} // namespace hbnn
