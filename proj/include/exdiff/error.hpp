#pragma once

#include <stdexcept>
#include <string>

namespace exdiff {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by caller-supplied values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor or grid shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed file or configuration; the message names the offending section or key.
class ParseError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace exdiff
