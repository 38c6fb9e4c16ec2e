#pragma once

#include <stdexcept>
#include <string>

namespace pbmr {

/// Bad user input: malformed files, invalid flags, violated preconditions.
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Failure while doing valid work (divergence, I/O trouble). Exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace pbmr
