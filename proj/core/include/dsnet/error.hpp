#pragma once

#include <stdexcept>
#include <string>

namespace dsnet {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed textual input (schedule notation, config documents).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input whose values break an invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape or channel-count mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or inconsistent files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Failure while running a computation (diverged training, etc).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace dsnet
