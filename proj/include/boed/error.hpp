#pragma once

#include <stdexcept>
#include <string>

namespace boed {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of a model or operation (bad design, outcome off support).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Shape mismatch or non-finite value inside an autodiff graph.
class AutodiffError : public Error {
 public:
  using Error::Error;
};

/// Raised when a numerical routine produced NaN/inf where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Configuration / usage error (maps to CLI exit code 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace boed
