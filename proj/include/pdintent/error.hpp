#pragma once

#include <stdexcept>
#include <string>

namespace pdintent {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition on an argument (bad lambda, mismatched horizon, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or could not start.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Unknown container format or unsupported format version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class LabelSetMismatch : public Error {
 public:
  using Error::Error;
};

/// Input file violates its schema; the message names the offending field.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace pdintent
