#pragma once

#include <stdexcept>
#include <string>

namespace tta {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Token id, target, or row index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `field()` names the offending entry when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string field = {})
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss or parameters).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Classifier guidance produced a non-finite gradient.
class GuidanceError : public Error {
 public:
  using Error::Error;
};

/// Generation trace violates its schema.
class TraceError : public Error {
 public:
  using Error::Error;
};

}  // namespace tta
