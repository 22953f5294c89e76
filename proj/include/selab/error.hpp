#pragma once

#include <stdexcept>
#include <string>

namespace selab {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform; the message names the op and the shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary / text file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration; the message starts with the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (non-scalar loss, detached loss, missing grad).
class GradError : public Error {
 public:
  using Error::Error;
};

}  // namespace selab
