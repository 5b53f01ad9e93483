#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qepdx {

// Invalid arguments use std::invalid_argument directly; the types below carry
// the failure categories that callers (notably the CLI) dispatch on.

/// Density evaluated at its mode for q < 2, where the radial term diverges.
class SingularDensity : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Factorization or solve failed even after the jitter retry.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedFamily : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value showed up while differentiating; `field` names the
/// parameter block whose gradient went bad.
class GradientFailure : public NumericalFailure {
 public:
  GradientFailure(const std::string& field, const std::string& what)
      : NumericalFailure(what + " (field " + field + ")"), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class TrainingDiverged : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// Malformed input data (ingestion) or data inconsistent with a model
/// (evaluation). `row` is 1-based, 0 when not row specific.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t row = 0)
      : std::runtime_error(row ? what + " (row " + std::to_string(row) + ")"
                               : what),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qepdx
