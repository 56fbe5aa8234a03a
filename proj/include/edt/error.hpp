#pragma once

#include <stdexcept>
#include <string>

namespace edt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf was produced, or a value left the domain of an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or version-mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class InvalidAction : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace edt
