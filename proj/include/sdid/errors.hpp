#pragma once

#include <stdexcept>
#include <string>

namespace sdid {

/// Base for every error the library raises. The C API maps each subclass to
/// a stable status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or geometry contract violated (inner dims, divisibility, broadcast).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Autodiff graph misuse: non-scalar loss, detached loss, double backward.
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration (unknown key, bad value, inconsistent geometry).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad magic, version, dtype or truncation in an on-disk format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or unwritable path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value was required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdid
