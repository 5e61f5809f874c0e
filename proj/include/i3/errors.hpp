#pragma once

#include <stdexcept>
#include <string>

namespace i3 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (CLI exit 1).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (CLI exit 2).
struct DataError : Error {
  using Error::Error;
};

// Tensor shape mismatch.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced by a forward op, or a non-finite loss.
struct NumericError : Error {
  using Error::Error;
};

// Autodiff misuse: non-scalar loss, detached graph.
struct GraphError : Error {
  using Error::Error;
};

// Binary file format violation. Each failure mode is a distinct kind so
// callers (and tests) can tell bad magic from a bad checksum.
struct FormatError : Error {
  enum class Kind { magic, version, checksum, truncated, layout };
  Kind kind;
  FormatError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace i3
