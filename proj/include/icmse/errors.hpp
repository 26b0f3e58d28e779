#pragma once

#include <stdexcept>
#include <string>

namespace icmse {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes to `main`.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
  virtual const char* code() const noexcept { return "error"; }
};

/// Malformed input: wrong dimensions, empty vectors, out-of-range arguments.
class ArgumentError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* code() const noexcept override { return "argument_error"; }
};

/// A model parameter outside its admissible domain (theta outside (0,1), ...).
class ParameterError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
  const char* code() const noexcept override { return "parameter_error"; }
};

/// Validation failure that can be attributed to a field of a request or config.
class ValidationError : public ArgumentError {
 public:
  ValidationError(std::string field, const std::string& what)
      : ArgumentError(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }
  const char* code() const noexcept override { return "validation_error"; }

 private:
  std::string field_;
};

/// Operation called on a model of the wrong kind (e.g. censored rows given to
/// the standard predictor).
class ModeError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
  const char* code() const noexcept override { return "mode_error"; }
};

/// Kernel family without a closed-form integral; callers fall back to quadrature.
class UnsupportedKernelError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
  const char* code() const noexcept override { return "unsupported_kernel"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
  const char* code() const noexcept override { return "numerical_error"; }
};

/// Truncation region with (numerically) zero probability.
class DegenerateTruncationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* code() const noexcept override { return "degenerate_truncation"; }
};

class FitError : public NumericalError {
 public:
  FitError(const std::string& what, double best_loglik)
      : NumericalError(what), best_loglik_(best_loglik) {}
  double best_loglik() const noexcept { return best_loglik_; }
  const char* code() const noexcept override { return "fit_error"; }

 private:
  double best_loglik_;
};

class ProposalError : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* code() const noexcept override { return "proposal_error"; }
};

class NotFoundError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* code() const noexcept override { return "not_found"; }
};

class ConflictError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* code() const noexcept override { return "conflict"; }
};

}  // namespace icmse
