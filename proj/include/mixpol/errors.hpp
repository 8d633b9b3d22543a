#pragma once

#include <stdexcept>
#include <string>

namespace mixpol {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not line up.
struct DimensionError : Error {
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

/// A NaN or infinity reached a place that requires finite values.
struct NonFiniteError : Error {
  using Error::Error;
};

struct UnsupportedPrimitive : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace mixpol
