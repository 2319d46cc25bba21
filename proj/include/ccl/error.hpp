#pragma once

#include <stdexcept>
#include <string>

namespace ccl {

// Base class for every failure raised by the library. The message is the
// stable, user-facing part; callers match on the exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or incomplete run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradients during training.
class DivergedError : public Error {
 public:
  using Error::Error;
};

// Unreadable or mismatched checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccl
