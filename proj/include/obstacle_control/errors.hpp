#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace obstacle_control {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error
{
public:
  using Error::Error;
};

class AssemblyError : public Error
{
public:
  using Error::Error;
};

class EvaluationError : public Error
{
public:
  using Error::Error;
};

class DimensionMismatch : public Error
{
public:
  using Error::Error;
};

/// Raised when a factorization reveals a matrix that is not positive definite.
class MatrixError : public Error
{
public:
  using Error::Error;
};

class InsufficientData : public Error
{
public:
  using Error::Error;
};

/// Iteration budget exhausted. Carries the last residual so callers can judge
/// how far from convergence the iterate was.
class NonConvergence : public Error
{
public:
  NonConvergence(const std::string& what, double last_residual)
    : Error(what + " (last residual " + std::to_string(last_residual) + ")"),
      last_residual_(last_residual)
  {}

  double last_residual() const noexcept { return last_residual_; }

private:
  double last_residual_;
};

/// Optimizer ran out of iterations; keeps the best control seen.
class OptimizerNonConvergence : public NonConvergence
{
public:
  OptimizerNonConvergence(const std::string& what, double last_residual, Eigen::VectorXd best)
    : NonConvergence(what, last_residual), best_(std::move(best))
  {}

  const Eigen::VectorXd& best() const noexcept { return best_; }

private:
  Eigen::VectorXd best_;
};

/// Optimizer could not make progress. `best()` is the best control found.
class StallError : public Error
{
public:
  StallError(const std::string& what, Eigen::VectorXd best, double best_value)
    : Error(what), best_(std::move(best)), best_value_(best_value)
  {}

  const Eigen::VectorXd& best() const noexcept { return best_; }
  double best_value() const noexcept { return best_value_; }

private:
  Eigen::VectorXd best_;
  double best_value_;
};

} // namespace obstacle_control
