#pragma once

#include <stdexcept>
#include <string>

namespace hitlsep {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad files, schema violations, stem mismatches).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor, window or clip shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced during numeric work.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hitlsep
