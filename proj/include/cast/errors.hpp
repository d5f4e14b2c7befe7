#pragma once

#include <stdexcept>
#include <string>

namespace cast {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller passed a value that violates an operation's preconditions.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An image file could not be decoded. The message names the path.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad TOML keys, empty corpora, inconsistent flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure while reading or writing artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cast
