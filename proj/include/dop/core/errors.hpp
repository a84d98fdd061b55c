#pragma once

#include <stdexcept>
#include <string>

namespace dop {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed arguments (action out of range, bad probability, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor or action shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Recorded data that cannot be used as requested.
class DataError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong object state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Operation not defined for this action space.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during optimisation.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step = -1) : Error(what), step_(step) {}
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

 private:
  long step_;
};

}  // namespace dop
