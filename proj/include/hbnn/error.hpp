#pragma once

#include <stdexcept>
#include <string>

namespace hbnn {

enum class ErrorKind {
  InvalidShape,
  EmptyInput,
  ShapeMismatch,
  DegenerateNorm,
  UnsupportedBitwidth,
  InvalidDistribution,
  InvalidInput,
  NumericFailure,
  Usage,
  Io,
  Format,
};

const char *to_string(ErrorKind kind);

// Every library failure is reported through this type; the CLI maps kinds to
// exit codes (Io -> 1, everything else -> 2).
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) {
  throw Error(kind, what);
}

} // namespace hbnn
