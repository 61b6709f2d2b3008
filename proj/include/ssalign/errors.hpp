#pragma once

#include <stdexcept>
#include <string>

namespace ssalign {

/// Operand shapes do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar or count argument is outside its valid range.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A training configuration cannot be satisfied by the data it is paired with.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reading or writing a feature, manifest or checkpoint file failed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stateful object was consumed before it was ready (e.g. prototypes before warm-up).
class SequencingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Optimization diverged or produced a non-finite value.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssalign
