#pragma once

#include <stdexcept>
#include <string>

namespace daash {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared, or an optimisation diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File missing, truncated, or malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace daash
