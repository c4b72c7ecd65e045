#pragma once

#include <stdexcept>
#include <string>

namespace stegosan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer extents that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (bad magic, version, truncated fields).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Data that violates a contract: labels out of range, empty sets, missing classes.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace stegosan
