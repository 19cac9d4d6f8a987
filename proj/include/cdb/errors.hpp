// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cdb {

/// Base of every recoverable error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data (labels out of range, empty files, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed IDX / CSV / checkpoint bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong object state (e.g. backward without forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdb
