#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "eqprice/finite_market.hpp"
#include "eqprice/linalg.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/model.hpp"
#include "eqprice/scenario.hpp"

namespace eqprice {

inline constexpr std::size_t kAssignmentCap = 4096;

/// Point cloud in R^n; empty `weights` means equal weights 1/size.
struct EmpiricalMeasure {
  std::vector<Vector> points;
  std::vector<double> weights;

  static EmpiricalMeasure uniform(std::vector<Vector> points);
  /// Throws ValidationError unless weights are positive and sum to 1 (within 1e-12).
  static EmpiricalMeasure weighted(std::vector<Vector> points, std::vector<double> weights);
  static EmpiricalMeasure scalar(const std::vector<double>& values);

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? 0 : static_cast<std::size_t>(points.front().size()); }
  bool is_uniform() const { return weights.empty(); }
  double weight(std::size_t i) const { return weights.empty() ? 1.0 / static_cast<double>(points.size()) : weights[i]; }
  Vector mean() const;
};

/// n = 1: exact quantile coupling (any weights). n > 1: exact optimal assignment;
/// needs two uniform clouds of equal size, otherwise UnsupportedError.
double wasserstein2(const EmpiricalMeasure& a, const EmpiricalMeasure& b);
/// Optimal assignment on squared distances for equal-size uniform clouds of any dimension.
double wasserstein2_assignment(const EmpiricalMeasure& a, const EmpiricalMeasure& b);
/// n = 1 only.
double wasserstein1(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

/// Minimum-cost perfect matching of a square cost matrix; returns column per row.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

/// N^{-2/max(n,4)} (1 + log N 1_{N=4}).
double epsilon_rate(std::size_t N, std::size_t n);

/// sum over non-terminal nodes of p_v dt |a_v - b_v|^2.
double price_gap(const NodeField& a, const NodeField& b);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  std::size_t points = 0;
  bool degenerate = true;  ///< fewer than 3 usable points
  std::vector<std::size_t> excluded;
};

/// OLS of log y on log N, dropping N = 4 and y below `floor`.
SlopeFit fit_loglog(const std::vector<std::size_t>& N, const std::vector<double>& y, double floor = 1e-14);

struct ConvergenceRow {
  std::size_t N = 0;
  std::size_t resample = 0;
  double price_gap = 0.0;
  double w2_g = 0.0;
  double w2_rT = 0.0;
  double int_w2_y = 0.0;
  double int_w2_p = 0.0;
  double epsilon_N = 0.0;
  double rhs() const { return w2_g + w2_rT + int_w2_y + int_w2_p; }
};

struct ConvergenceSummary {
  std::size_t N = 0;
  double mean_gap = 0.0, gap_se = 0.0;
  double mean_rhs = 0.0, rhs_se = 0.0;
  double epsilon_N = 0.0;
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;  ///< ordered by (N, resample)
  std::vector<ConvergenceSummary> per_N;
  std::size_t resamples = 0;
  std::uint64_t seed = 0;
  SlopeFit gap_fit;
  SlopeFit rhs_fit;
  bool degenerate = false;  ///< every gap numerically zero
  /// Inequality shape: C = max_N mean_gap / mean_rhs, and the log-log slope of that ratio.
  std::optional<double> fitted_C;
  std::optional<double> ratio_slope;
};

struct StudyOptions {
  TimeGrid grid{1.0, 4};
  std::size_t branching = 2;
  std::size_t threads = 1;
  SolverChoice choice;
  bool check = true;
};

/// Wasserstein terms of the convergence bound for N agents holding the given atoms.
ConvergenceRow wasserstein_terms(const MfgSolution& mfg, const std::vector<std::size_t>& agent_atoms);

/// Homogeneous finite-N equilibria against the mean-field limit over resampled atom draws.
ConvergenceReport convergence_study(const ModelSpec& spec, const std::vector<std::size_t>& N_list,
                                    std::size_t resamples, std::uint64_t seed, const StudyOptions& options = {});

struct GlivenkoRow {
  std::size_t N = 0;
  double mean_w2sq = 0.0;
  double se = 0.0;
  double epsilon_N = 0.0;
};

struct GlivenkoReport {
  std::vector<GlivenkoRow> rows;
  SlopeFit fit;
};

/// W2^2 between N-sample empirical clouds and the exact (scalar) atom law.
GlivenkoReport glivenko_cantelli_study(const std::vector<double>& values, const std::vector<double>& weights,
                                       const std::vector<std::size_t>& N_list, std::size_t resamples,
                                       std::uint64_t seed, std::size_t threads = 1);

struct StabilityReport {
  std::size_t N = 0;
  double lhs_hetero = 0.0;  ///< E int |phi^He - phi^mfg|^2
  double lhs_homo = 0.0;    ///< E int |phi^Ho - phi^mfg|^2
  double hetero_homo_gap = 0.0;  ///< E int |phi^He - phi^Ho|^2
  double d_fx = 0.0, d_cfR = 0.0, d_l = 0.0, d_sigma0 = 0.0, d_sigma = 0.0;
  double d_terminal_x = 0.0, d_terminal_r = 0.0;
  ConvergenceRow wasserstein;
  EquilibriumSolution hetero, homo;
};

/// Both markets share the population drawn from the homogeneous spec's atoms (agent i holds
/// atom `atoms[i]`). The heterogeneous spec carries one bundle per agent.
StabilityReport stability_gap(const ModelSpec& hetero_spec, const ModelSpec& homo_spec, const LatticePtr& lattice,
                              const std::vector<std::size_t>& atoms, const SolverChoice& choice = {},
                              bool check = true);

}  // namespace eqprice
