#pragma once

#include <stdexcept>
#include <string>

namespace weakmil {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied an argument outside the documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatchError : public ParseError {
 public:
  using ParseError::ParseError;
};

// A feature payload decoded to NaN or Inf.
class NanPayloadError : public ParseError {
 public:
  using ParseError::ParseError;
};

// A constraint (pairing, coverage, batch composition) cannot be met.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a place that requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

// The low-attention feature of a single-frame bag was requested.
class UndefinedLowError : public Error {
 public:
  using Error::Error;
};

}  // namespace weakmil
