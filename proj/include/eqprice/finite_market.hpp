#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "eqprice/fbsde.hpp"
#include "eqprice/model.hpp"
#include "eqprice/scenario.hpp"

namespace eqprice {

struct AgentData {
  std::size_t atom = 0;
  std::size_t bundle = 0;  ///< index into ModelSpec::agents (0 when homogeneous)
  double weight = 1.0;     ///< weight in the empirical mean
  Vector xi;
  Vector ci;
};

/// Minor agents entering a market. `mass` converts normalized flows b = beta/N
/// back to beta: N for a finite market, 1 for a weighted atom population.
struct Population {
  std::vector<AgentData> agents;
  double mass = 1.0;

  std::size_t size() const { return agents.size(); }

  /// Agent i takes atom atoms[i], weight 1/N, mass N.
  static Population from_atoms(const ModelSpec& spec, const std::vector<std::size_t>& atoms);
  /// N i.i.d. draws from the atom law (see sample_idiosyncratic).
  static Population sampled(const ModelSpec& spec, std::size_t N, std::uint64_t seed, std::uint64_t stream = 0);
  /// One agent per atom carrying the atom's weight; mass 1 (mean-field normalization).
  static Population weighted_atoms(const ModelSpec& spec);
};

/// Coefficient values per node, stored once when constant in (t, c0).
struct CachedCoefficient {
  std::vector<Matrix> values;
  bool constant = true;
  const Matrix& at(std::size_t v) const { return constant ? values.front() : values[v]; }
  Vector vec(std::size_t v) const { return at(v).col(0); }
};

struct MinorCache {
  CachedCoefficient l, sigma0, cf, hf, cg, hg;
};

struct MajorCache {
  CachedCoefficient l0, s0;
};

/// Everything the market systems evaluate, prepared once.
struct MarketData {
  ModelSpec spec;
  LatticePtr lattice;
  ExogenousFields exo;
  Population population;
  std::vector<MinorCache> caches;        ///< distinct (bundle, atom) pairs
  std::vector<std::size_t> cache_of;     ///< per agent
  MajorCache major;

  const MinorCache& coef(std::size_t agent) const { return caches[cache_of[agent]]; }
  std::size_t n() const { return spec.dims.n; }
  double delta_ratio() const { return spec.delta / (1.0 - spec.delta); }
  Vector major_dfdx(std::size_t v, const Vector& x0) const;
  Vector major_dgdx(std::size_t v, const Vector& x0) const;

  /// Validates the spec, rejects idiosyncratic diffusion, evaluates exogenous fields.
  static std::shared_ptr<const MarketData> build(const ModelSpec& spec, const LatticePtr& lattice,
                                                 const Population& population);
};

using MarketPtr = std::shared_ptr<const MarketData>;

/// X_{k+1} = X_k + dt(-Lbar(Y + phi) + l) + sigma0 dW;  Y_k = E[Y_{k+1} + dt(c^f X_{k+1} + h^f)];
/// Y_K = -delta phi_K + c^g X_K + h^g  (maturity: -c0_K).
class BestResponseSystem : public FbsdeSystem {
 public:
  BestResponseSystem(MarketPtr market, std::size_t agent, NodeField price);
  const LatticePtr& lattice() const override { return m_->lattice; }
  std::size_t forward_size() const override { return m_->n(); }
  std::size_t backward_size() const override { return m_->n(); }
  std::vector<Block> forward_blocks() const override { return {{"X", 0, m_->n()}}; }
  std::vector<Block> backward_blocks() const override { return {{"Y", 0, m_->n()}}; }
  void initial(VecRef out) const override;
  void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void diffusion(std::size_t v, VecCRef dW, VecRef out) const override;
  void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const override;

 private:
  MarketPtr m_;
  std::size_t agent_;
  NodeField price_;
};

/// Clearing system for a given normalized major flow b = beta/N.
/// Forward [X^1..X^N], backward [Y^1..Y^N], aggregates [mY, mG].
class MinorClearingSystem : public FbsdeSystem {
 public:
  MinorClearingSystem(MarketPtr market, NodeField flow);
  const LatticePtr& lattice() const override { return m_->lattice; }
  std::size_t forward_size() const override { return m_->n() * m_->population.size(); }
  std::size_t backward_size() const override { return forward_size(); }
  std::size_t aggregate_size() const override { return 2 * m_->n(); }
  std::vector<Block> forward_blocks() const override;
  std::vector<Block> backward_blocks() const override;
  std::vector<Block> aggregate_blocks() const override;
  void initial(VecRef out) const override;
  void aggregates(std::size_t v, VecCRef F, VecCRef B, VecRef out, Terms terms) const override;
  void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void diffusion(std::size_t v, VecCRef dW, VecRef out) const override;
  void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const override;

  const NodeField& flow() const { return flow_; }

 private:
  MarketPtr m_;
  NodeField flow_;
};

/// Full coupled system with the major agent's optimal flow.
/// Forward [x0 | (X^i, R^i)_i], backward [P0 | (Y^i, P^i)_i], aggregates [mY, mP, b, mG, mR].
class EquilibriumSystem : public FbsdeSystem {
 public:
  explicit EquilibriumSystem(MarketPtr market);
  const LatticePtr& lattice() const override { return m_->lattice; }
  std::size_t forward_size() const override { return m_->n() * (1 + 2 * m_->population.size()); }
  std::size_t backward_size() const override { return forward_size(); }
  std::size_t aggregate_size() const override { return 5 * m_->n(); }
  bool affine() const override { return m_->spec.major.dfdx.affine() && m_->spec.major.dgdx.affine(); }
  std::vector<Block> forward_blocks() const override;
  std::vector<Block> backward_blocks() const override;
  std::vector<Block> aggregate_blocks() const override;
  void initial(VecRef out) const override;
  void aggregates(std::size_t v, VecCRef F, VecCRef B, VecRef out, Terms terms) const override;
  void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void diffusion(std::size_t v, VecCRef dW, VecRef out) const override;
  void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const override;

 private:
  MarketPtr m_;
};

struct SolverChoice {
  SolveMethod method = SolveMethod::direct;
  DirectOptions direct;
  PicardOptions picard;
};

NodeSolution solve_system(const FbsdeSystem& system, const SolverChoice& choice);

struct EquilibriumSolution {
  MarketPtr market;
  NodeSolution solution;
  bool has_major = false;
  NodeField x0, p0;               ///< normalized major state and its adjoint (full equilibrium only)
  std::vector<NodeField> X, Y;    ///< per agent
  std::vector<NodeField> R, P;    ///< per agent (full equilibrium only)
  NodeField beta_hat;             ///< normalized flow b = beta/N
  NodeField price;
  std::vector<NodeField> alpha_hat;
  double clearing_residual = 0.0;

  const NoiseLattice& lattice() const { return *market->lattice; }
  std::size_t agents() const { return X.size(); }
  /// beta = mass * b at node v.
  Vector beta(std::size_t v) const { return market->population.mass * beta_hat.vec(v); }
};

struct BestResponse {
  NodeField X, Y, z, alpha;
  SolveDiagnostics diagnostics;
};

/// Price-taker optimum of every agent against `price`.
std::vector<BestResponse> minor_best_response(const MarketPtr& market, const NodeField& price,
                                              const SolverChoice& choice = {}, std::size_t threads = 1);

/// phi = -mY + Lambda b at every node.
EquilibriumSolution solve_minor_clearing(const MarketPtr& market, const NodeField& flow,
                                         const SolverChoice& choice = {});

/// With `check`, throws AssumptionError unless the assumption checks pass.
EquilibriumSolution solve_full_equilibrium(const MarketPtr& market, const SolverChoice& choice = {},
                                           bool check = true);

/// Max over non-terminal nodes of |sum_i alpha^i + beta|, with alpha^i = -Lbar (Y^i + phi)
/// recomputed from the solution's Y and price.
double clearing_residual(const EquilibriumSolution& solution);

}  // namespace eqprice
