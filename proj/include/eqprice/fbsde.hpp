#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "eqprice/linalg.hpp"
#include "eqprice/scenario.hpp"

namespace eqprice {

using VecRef = Eigen::Ref<Vector>;
using VecCRef = Eigen::Ref<const Vector>;

/// `linear` asks an evaluator for its homogeneous part only (exogenous offsets dropped).
enum class Terms { all, linear };

/// Named slice of a state vector.
struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Discrete forward-backward system on a lattice. With dt = T/K:
///   F_root = initial
///   F_c = F_v + dt * drift(v, F_v, B_v, A_v) + diffusion(v) dW_c        (c child of v)
///   B_v = sum_c p_c (B_c + dt * driver(c, F_c, B_c, A_c))                 (v not a leaf)
///   B_v = terminal(v, F_v, A_v)                                           (v a leaf)
///   A_v = aggregates(v, F_v, B_v)
/// Aggregates carry empirical means, conditional means and closed-form controls.
class FbsdeSystem {
 public:
  virtual ~FbsdeSystem() = default;

  virtual const LatticePtr& lattice() const = 0;
  virtual std::size_t forward_size() const = 0;
  virtual std::size_t backward_size() const = 0;
  virtual std::size_t aggregate_size() const { return 0; }
  /// True only if every evaluator is affine in (F, B, A).
  virtual bool affine() const { return true; }

  virtual std::vector<Block> forward_blocks() const { return {{"F", 0, forward_size()}}; }
  virtual std::vector<Block> backward_blocks() const { return {{"B", 0, backward_size()}}; }
  virtual std::vector<Block> aggregate_blocks() const { return {{"A", 0, aggregate_size()}}; }

  virtual void initial(VecRef out) const = 0;
  virtual void aggregates(std::size_t /*v*/, VecCRef /*F*/, VecCRef /*B*/, VecRef /*out*/, Terms /*terms*/) const {}
  virtual void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const = 0;
  /// out = sigma(v) dW; state independent.
  virtual void diffusion(std::size_t v, VecCRef dW, VecRef out) const = 0;
  virtual void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const = 0;
  virtual void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const = 0;
};

enum class SolveMethod { direct, picard };

struct SolveDiagnostics {
  SolveMethod method = SolveMethod::direct;
  std::size_t iterations = 0;
  double max_equation_residual = 0.0;
  double terminal_mismatch = 0.0;
  double tolerance = 0.0;
  bool converged = false;
};

struct NodeSolution {
  NodeField forward;     ///< forward_size
  NodeField backward;    ///< backward_size
  NodeField aggregates;  ///< aggregate_size
  /// Martingale increment B_c + dt*driver_c - B_parent, stored at the child c (zero at the root).
  NodeField increments;
  /// Per-unit-dW representation E_v[increment_c dW_c^T] / dt, backward_size x d0 (zero at leaves).
  NodeField z;
  SolveDiagnostics diagnostics;
};

struct BackwardStep {
  Vector value;
  std::vector<Vector> increments;
};

/// value = sum_c p_c (child_c + dt * driver_c); increments_c = child_c + dt*driver_c - value.
/// Throws ValidationError if the probabilities do not sum to one.
BackwardStep backward_step(const std::vector<Vector>& child_values, const std::vector<double>& probabilities,
                           const std::vector<Vector>& driver_values, double dt);
/// Same with one driver value for all children.
BackwardStep backward_step(const std::vector<Vector>& child_values, const std::vector<double>& probabilities,
                           const Vector& driver_value, double dt);
/// Probabilities taken from the lattice's child law at `node`.
BackwardStep backward_step(const NoiseLattice& lattice, std::size_t node, const std::vector<Vector>& child_values,
                           const Vector& driver_value);

struct DirectOptions {
  double tolerance = 1e-10;
  std::size_t unknown_budget = std::size_t{1} << 24;
  std::size_t threads = 1;
};

struct PicardOptions {
  double damping = 0.5;
  double tolerance = 1e-10;
  std::size_t max_iter = 500;
  std::size_t threads = 1;
};

/// One sparse LU solve of all node equations. Requires an affine system.
NodeSolution solve_direct(const FbsdeSystem& system, const DirectOptions& options = {});

/// Damped forward/backward sweeps. Throws SolverError after max_iter.
NodeSolution solve_picard(const FbsdeSystem& system, const PicardOptions& options = {});

/// Recomputes every equation row of `solution` and reports the largest violation.
SolveDiagnostics residual(const FbsdeSystem& system, const NodeSolution& solution);

/// Fills increments and z from the forward/backward/aggregate fields.
void fill_martingale_parts(const FbsdeSystem& system, NodeSolution& solution);

}  // namespace eqprice
