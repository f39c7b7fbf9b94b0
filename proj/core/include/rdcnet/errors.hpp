#pragma once

#include <stdexcept>
#include <string>

namespace rdc {

/// Invalid hyperparameters or shape configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: wrong shapes at call time, non-scalar backward, missing grads.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Filesystem or codec failure (CLI exit code 3).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed checkpoint or manifest contents (CLI exit code 3).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite values during training (CLI exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input (e.g. a prediction for a ground-truth image) is absent (CLI exit code 5).
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Synthetic data could not satisfy its packing constraints.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rdc
