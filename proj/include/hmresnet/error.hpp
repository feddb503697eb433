#pragma once

#include <stdexcept>
#include <string>

namespace hmresnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration object violates one of its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad caller input that is neither a shape nor a config problem
// (label out of range, backward with the wrong context, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Problems reading external data: missing files, malformed rows.
class InputError : public Error {
 public:
  using Error::Error;
};

// Binary container errors (model and dataset files).
class FormatError : public Error {
 public:
  using Error::Error;
};
class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace hmresnet
