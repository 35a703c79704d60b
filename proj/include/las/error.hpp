#pragma once

#include <stdexcept>
#include <string>

namespace las {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A kernel produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// A non-differentiable kernel was invoked while a tape was recording.
class NotDifferentiableError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace las
