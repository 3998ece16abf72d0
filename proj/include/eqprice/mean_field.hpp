#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "eqprice/fbsde.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/model.hpp"
#include "eqprice/scenario.hpp"

namespace eqprice {

/// Atom-weighted means of the minor coefficients on the common lattice.
struct MeanCoefficients {
  NodeField l, sigma0, hf, hg;
  Vector xi;
};

/// Market over the weighted atom population plus the conditional-mean data.
/// Throws UnsupportedError unless the model is homogeneous and c^f, c^g do not depend on c^i.
struct MfgData {
  MarketPtr market;
  MeanCoefficients mean;

  static std::shared_ptr<const MfgData> build(const ModelSpec& spec, const LatticePtr& lattice);
};

using MfgDataPtr = std::shared_ptr<const MfgData>;

/// Conditional means on the common lattice.
/// Forward [x0, xbar, rbar], backward [p0, ybar, pbar], aggregates [b].
class MeanSystem : public FbsdeSystem {
 public:
  explicit MeanSystem(MfgDataPtr data);
  const LatticePtr& lattice() const override { return d_->market->lattice; }
  std::size_t forward_size() const override { return 3 * n(); }
  std::size_t backward_size() const override { return 3 * n(); }
  std::size_t aggregate_size() const override { return n(); }
  bool affine() const override;
  std::vector<Block> forward_blocks() const override;
  std::vector<Block> backward_blocks() const override;
  std::vector<Block> aggregate_blocks() const override { return {{"b", 0, n()}}; }
  void initial(VecRef out) const override;
  void aggregates(std::size_t v, VecCRef F, VecCRef B, VecRef out, Terms terms) const override;
  void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void diffusion(std::size_t v, VecCRef dW, VecRef out) const override;
  void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const override;

 private:
  std::size_t n() const { return d_->market->n(); }
  MfgDataPtr d_;
};

/// Minor mean blocks for a given normalized flow b. Forward [xbar], backward [ybar].
class MeanMinorSystem : public FbsdeSystem {
 public:
  MeanMinorSystem(MfgDataPtr data, NodeField flow);
  const LatticePtr& lattice() const override { return d_->market->lattice; }
  std::size_t forward_size() const override { return d_->market->n(); }
  std::size_t backward_size() const override { return d_->market->n(); }
  std::vector<Block> forward_blocks() const override { return {{"xbar", 0, d_->market->n()}}; }
  std::vector<Block> backward_blocks() const override { return {{"ybar", 0, d_->market->n()}}; }
  void initial(VecRef out) const override;
  void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void diffusion(std::size_t v, VecCRef dW, VecRef out) const override;
  void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const override;

 private:
  MfgDataPtr d_;
  NodeField flow_;
};

/// Deviation of one atom from the conditional mean. Forward [x - xbar], backward [y - ybar].
/// The r and p deviations vanish identically.
class DeviationSystem : public FbsdeSystem {
 public:
  DeviationSystem(MfgDataPtr data, std::size_t atom);
  const LatticePtr& lattice() const override { return d_->market->lattice; }
  std::size_t forward_size() const override { return d_->market->n(); }
  std::size_t backward_size() const override { return d_->market->n(); }
  std::vector<Block> forward_blocks() const override { return {{"dx", 0, d_->market->n()}}; }
  std::vector<Block> backward_blocks() const override { return {{"dy", 0, d_->market->n()}}; }
  void initial(VecRef out) const override;
  void drift(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void diffusion(std::size_t v, VecCRef dW, VecRef out) const override;
  void driver(std::size_t v, VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms terms) const override;
  void terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const override;

 private:
  MfgDataPtr d_;
  std::size_t atom_;
};

/// The closed system of conditional means.
std::unique_ptr<MeanSystem> reduce_conditional_means(const ModelSpec& spec, const LatticePtr& lattice);

struct MfgSolution {
  MfgDataPtr data;
  NodeSolution mean;
  NodeField x0, xbar, rbar, p0, ybar, pbar;
  std::vector<NodeField> dx, dy;  ///< per atom
  std::vector<double> weights;     ///< per atom
  NodeField beta_hat;
  NodeField price_mfg;
  std::vector<SolveDiagnostics> deviation_diagnostics;

  const NoiseLattice& lattice() const { return *data->market->lattice; }
  std::size_t atoms() const { return dx.size(); }
  /// Per-atom state x = xbar + dx.
  NodeField atom_x(std::size_t a) const;
  /// Per-atom adjoint y = ybar + dy.
  NodeField atom_y(std::size_t a) const;
  /// Per-atom p and r equal their means.
  const NodeField& atom_p(std::size_t) const { return pbar; }
  const NodeField& atom_r(std::size_t) const { return rbar; }
};

struct MfgOptions {
  SolverChoice choice;
  std::size_t threads = 1;
  bool check = true;
};

/// Mean system solve followed by independent per-atom deviation solves.
MfgSolution solve_mfg(const ModelSpec& spec, const LatticePtr& lattice, const MfgOptions& options = {});

/// Copy of `spec` with the terminal blocks switched to the maturity payoff.
ModelSpec mfg_maturity_override(const ModelSpec& spec);

}  // namespace eqprice
