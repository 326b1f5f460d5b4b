#pragma once

#include <stdexcept>
#include <string>

namespace ink {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: invalid ids, shape mismatches, malformed text files.
class InputError : public Error {
 public:
  using Error::Error;
};

class LengthError : public InputError {
 public:
  using InputError::InputError;
};

// Corrupt or incompatible binary file.
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation invalid for the current object state (empty datastore, corpus mismatch).
class StateError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ink
