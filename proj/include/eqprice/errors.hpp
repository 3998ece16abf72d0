#pragma once

#include <stdexcept>
#include <string>

namespace eqprice {

/// Malformed input: wrong shapes, invalid constants, unknown keys.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A standing assumption of the model fails at some evaluation point.
class AssumptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Singular system, non-convergence or a failed inner solve.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double last_residual = 0.0, std::size_t iterations = 0)
      : std::runtime_error(what), last_residual_(last_residual), iterations_(iterations) {}
  double last_residual() const { return last_residual_; }
  std::size_t iterations() const { return iterations_; }

 private:
  double last_residual_;
  std::size_t iterations_;
};

/// A configured budget (nodes, unknowns, atoms) would be exceeded.
class SizingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the supported model class.
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eqprice
