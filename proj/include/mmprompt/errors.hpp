#pragma once

#include <stdexcept>
#include <string>

namespace mmprompt {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf surfaced by an operation, or a diverged loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  enum class Kind { MissingFile, ShapeMismatch, LabelOutOfRange, Malformed };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// The frozen backbone changed while it was supposed to stay fixed.
class FrozenViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace mmprompt
