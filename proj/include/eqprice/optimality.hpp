#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/model.hpp"
#include "eqprice/scenario.hpp"

namespace eqprice {

/// Expected cost of agent `agent` trading at rate `alpha` against a fixed price, with
/// f = <phi,a> + 1/2 <a,Lambda a> + 1/2 <x,c^f x> + <h^f,x> and
/// g = -delta <phi_T,x> + 1/2 <x,c^g x> + <h^g,x>  (maturity: -<c0_T,x>).
double cost_minor(const MarketPtr& market, std::size_t agent, const NodeField& price, const NodeField& alpha);

/// Normalized major cost for flow b and price phi:
/// E[sum dt (<b,phi> + 1/2 <b,Lambda0 b> + f0(x0)) + g0(x0_T)].
double cost_major_given_price(const MarketData& market, const NodeField& flow, const NodeField& price);

/// Re-solves the clearing system for `flow`, then evaluates the major cost with the induced price.
double cost_major(const MarketPtr& market, const NodeField& flow, const SolverChoice& choice = {});

/// Major cost evaluated on an equilibrium's own flow and price.
double cost_major_from_solution(const EquilibriumSolution& solution);

/// Mean-field major cost: the minor mean blocks are re-solved for `flow`.
double cost_mfg(const MfgDataPtr& data, const NodeField& flow, const SolverChoice& choice = {});

/// Price induced by `flow` in the mean-field market.
NodeField mfg_price_for_flow(const MfgDataPtr& data, const NodeField& flow, const SolverChoice& choice = {});

// ---------------------------------------------------------------------------
// Hamiltonians

struct PointContext {
  double t = 0.0;
  Vector c0;
};

/// <y, a + l> + <phi,a> + 1/2 <a,Lambda a> + fbar(x).
double hamiltonian_minor(const ModelSpec& spec, std::size_t bundle, const PointContext& at, const Vector& ci,
                         const Vector& x, const Vector& y, const Vector& alpha, const Vector& phi);
/// -Lbar (y + phi); AssumptionError if Lambda is singular.
Vector minor_minimizer(const Matrix& lambda, const Vector& y, const Vector& phi);

/// Arguments of the N-agent system Hamiltonian; x0 is the unnormalized major position.
struct SystemArgs {
  Vector x0, p0;
  std::vector<Vector> x, y, p, r, ci;
};

double hamiltonian_n(const ModelSpec& spec, const PointContext& at, const SystemArgs& args, const Vector& beta);
/// N (Lambda0 + 2 Lambda)^{-1} (-p0 + m(y) + m(p)).
Vector beta_minimizer_n(const Matrix& lambda0, const Matrix& lambda, const Vector& p0, const std::vector<Vector>& y,
                        const std::vector<Vector>& p);

struct MfgArgs {
  Vector x0, x1, y1, ybar, p0, p1, pbar, r1, c1;
};

double hamiltonian_mfg(const ModelSpec& spec, const PointContext& at, const MfgArgs& args, const Vector& beta);
/// (Lambda0 + 2 Lambda)^{-1} (-p0 + ybar + pbar).
Vector beta_minimizer_mfg(const Matrix& lambda0, const Matrix& lambda, const Vector& p0, const Vector& ybar,
                          const Vector& pbar);

// ---------------------------------------------------------------------------
// Perturbation tests

enum class PerturbationLevel { minor, major_n, major_mfg };

const char* level_name(PerturbationLevel level);

struct PerturbationOptions {
  std::size_t directions = 20;
  std::vector<double> eps_grid{0.0, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2};
  std::uint64_t seed = kDefaultSeed;
  std::size_t threads = 1;
  SolverChoice choice;
  std::size_t agent = 0;  ///< perturbed agent at the minor level
  bool check = true;
};

struct DirectionFit {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0;
  bool failed = false;
  std::string error;
};

struct PerturbationReport {
  PerturbationLevel level = PerturbationLevel::major_n;
  std::size_t directions = 0;
  std::vector<double> eps_grid;
  std::vector<std::vector<double>> delta_J;  ///< [direction][eps]
  std::vector<DirectionFit> fits;
  double base_cost = 0.0;
  double min_delta_J = 0.0;
  double gradient_norm = 0.0;  ///< max |a1|
  double min_curvature = 0.0;  ///< min a2
  std::size_t failed_directions = 0;
};

/// Random adapted direction: i.i.d. normal node values, zero at terminal nodes, unit lattice L2 norm.
NodeField random_direction(const LatticePtr& lattice, std::size_t width, std::uint64_t seed, std::size_t direction);

/// Least-squares fit of dJ ~ a0 + a1 eps + a2 eps^2.
DirectionFit fit_quadratic(const std::vector<double>& eps, const std::vector<double>& dJ);

/// Solves the optimum for `level` (full equilibrium on `population`, or the mean-field system),
/// then evaluates J(opt + eps eta) - J(opt) over random directions.
PerturbationReport perturbation_test(const ModelSpec& spec, const LatticePtr& lattice, PerturbationLevel level,
                                     const Population& population, const PerturbationOptions& options = {});

}  // namespace eqprice
