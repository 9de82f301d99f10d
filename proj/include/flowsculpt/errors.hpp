#pragma once

#include <stdexcept>
#include <string>

namespace flowsculpt {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar argument is outside its documented domain (bad action id, bad fraction...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Two grids, tensors or batches that must agree in shape do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// PMR against a target with no on-pixels.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a state that does not allow it (step after done, under-filled replay...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value showed up in parameters, Q-values or updates.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Malformed document (shape/library/config file or wire payload).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowsculpt
