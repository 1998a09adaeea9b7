#pragma once

#include <stdexcept>
#include <string>

namespace d3pcqa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (PLY header, CSV manifest, config file).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A value violated a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unsupported configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not agree for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint container could not be read back.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Numerical routine failed (singular system, eigensolver, non-finite loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace d3pcqa
