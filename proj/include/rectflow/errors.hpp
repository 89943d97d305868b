#pragma once

#include <stdexcept>
#include <string>

namespace rectflow {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API precondition (wrong shapes, wrong usage order).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Shape mismatch between operands; message names both shapes.
class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Mathematically invalid input (t outside [0,1], out-of-vocab token, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf. Fail fast, never propagate silently.
class NumericFault : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration; message names the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Closed-form expression evaluated at a singular point.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Adaptive solver exceeded its function-evaluation budget.
class SolverBudgetError : public Error {
 public:
  using Error::Error;
};

// Adaptive solver step size underflowed; the field is too stiff.
class StiffnessError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was invoked without its prerequisite artifact.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// File read/write failure or malformed container.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training loss went non-finite; the last consistent state was persisted.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace rectflow
