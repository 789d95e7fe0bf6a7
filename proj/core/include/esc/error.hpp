#pragma once

#include <stdexcept>
#include <string>

namespace esc {

// Root of every error raised by the library. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (shape mismatch, empty window, bad label).
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (even kernel, non-positive attenuation, bin mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition that the harness is responsible for.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Metrics requested on an empty confusion matrix.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during an optimization loop.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or dataset file could not be read or has the wrong format.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace esc
