#pragma once

#include <stdexcept>
#include <string>

namespace mfp {

// Base of every error the library raises. The CLI maps the concrete kind onto
// an exit code, so new error kinds should derive from one of the leaves below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

// Training diverged: a loss or gradient stopped being finite.
class NumericError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary payloads. Messages carry the byte offset of the fault.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace mfp
