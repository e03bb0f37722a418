#pragma once

#include <stdexcept>
#include <string>

namespace crtperm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (JSON schema, option values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a structural or domain invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed (non-convergence, singular matrix, ...).
class NumericalError : public Error {
 public:
  NumericalError(std::string module, const std::string& what)
      : Error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

}  // namespace crtperm
