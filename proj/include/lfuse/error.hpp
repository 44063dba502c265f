#pragma once

#include <stdexcept>
#include <string>

namespace lfuse {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can separate library errors from programming errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or widths disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition on the call was violated (empty input, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf seen at an op boundary while finite checks are enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Binary file with wrong magic, version, or truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File ends before the payload its header announces.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Checkpoint header does not match the requested configuration.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// Malformed JSONL line or missing key.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Dataset content that violates an evaluation contract.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lfuse
