// Acceptance gates. One PASS/FAIL line per criterion; exit status 1 if any selected criterion fails.
// Usage: eqprice_acceptance [criterion ...]   (no arguments runs all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "benchmarks.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/metrics.hpp"
#include "eqprice/optimality.hpp"
#include "eqprice/report_io.hpp"
#include "oracle.hpp"

using namespace eqprice;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double field_gap(const NodeField& a, const NodeField& b) { return a.empty() && b.empty() ? 0.0 : a.max_diff(b); }

double solution_gap(const EquilibriumSolution& a, const EquilibriumSolution& b) {
  double g = std::max({field_gap(a.price, b.price), field_gap(a.beta_hat, b.beta_hat), field_gap(a.x0, b.x0),
                       field_gap(a.p0, b.p0)});
  for (std::size_t i = 0; i < a.agents(); ++i) {
    g = std::max({g, a.X[i].max_diff(b.X[i]), a.Y[i].max_diff(b.Y[i]), a.alpha_hat[i].max_diff(b.alpha_hat[i])});
    if (i < a.R.size()) g = std::max({g, a.R[i].max_diff(b.R[i]), a.P[i].max_diff(b.P[i])});
  }
  return g;
}

/// Max over non-terminal nodes of |sum_i alpha^i + beta|, from the stored controls.
double clearing_gap(const EquilibriumSolution& s) {
  const NoiseLattice& L = s.lattice();
  double g = 0.0;
  for (std::size_t v = 0; v < L.level_begin(L.steps()); ++v) {
    Vector sum = s.beta(v);
    for (const auto& a : s.alpha_hat) sum += a.vec(v);
    g = std::max(g, sum.cwiseAbs().maxCoeff());
  }
  return g;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) mx += std::log(x[k]) / x.size(), my += std::log(y[k]) / y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (std::log(x[k]) - mx) * (std::log(y[k]) - my);
    sxx += (std::log(x[k]) - mx) * (std::log(x[k]) - mx);
  }
  return sxy / sxx;
}

// --------------------------------------------------------------------------

Verdict market_clearing() {
  double worst = 0.0;
  int cases = 0;
  for (std::size_t n : {1u, 2u})
    for (std::size_t N : {1u, 2u, 4u, 8u})
      for (std::size_t K : {2u, 4u, 6u}) {
        const ModelSpec s = bench::lq(n, N);
        const auto sol = solve_full_equilibrium(bench::market(s, bench::lattice(s, K), N));
        worst = std::max({worst, clearing_gap(sol), clearing_residual(sol)});
        ++cases;
      }
  return {worst <= 1e-10, std::to_string(cases) + " cases, max |sum alpha + beta| = " + fmt("%.3e", worst) +
                              " (tol 1e-10)"};
}

Verdict oracle_equivalence() {
  SolverChoice pic;
  pic.method = SolveMethod::picard;
  pic.picard.tolerance = 1e-13;
  pic.picard.max_iter = 20000;
  double worst = 0.0;
  for (std::size_t n : {1u, 2u})
    for (std::size_t N : {1u, 2u, 4u, 8u})
      for (std::size_t K : {2u, 4u, 6u}) {
        const ModelSpec s = bench::lq(n, N);
        auto mk = bench::market(s, bench::lattice(s, K), N);
        worst = std::max(worst, solution_gap(solve_full_equilibrium(mk), solve_full_equilibrium(mk, pic)));
      }
  // Exhaustive tiny-tree oracle, two agents, two steps.
  const ModelSpec s = bench::lq_scalar(2);
  auto lat = bench::lattice(s, 2);
  oracle::Instance inst;
  inst.first_increment_sign = lat->increment(0)(0) > 0 ? 1.0 : -1.0;
  const auto o = oracle::equilibrium(inst);
  auto mk = bench::market(s, lat, 2);
  double og = 0.0;
  for (const auto& sol : {solve_full_equilibrium(mk), solve_full_equilibrium(mk, pic)})
    for (std::size_t v = 0; v < lat->size(); ++v) {
      og = std::max({og, std::abs(sol.price.at(v, 0) - o.phi[v]), std::abs(sol.x0.at(v, 0) - o.x0[v])});
      if (!lat->is_leaf(v)) og = std::max(og, std::abs(sol.beta_hat.at(v, 0) - o.b[v]));
      for (std::size_t i = 0; i < 2; ++i)
        og = std::max({og, std::abs(sol.X[i].at(v, 0) - o.X[i][v]), std::abs(sol.Y[i].at(v, 0) - o.Y[i][v])});
    }
  return {worst <= 1e-8 && og <= 1e-8,
          "picard vs direct " + fmt("%.3e", worst) + ", oracle " + fmt("%.3e", og) + " (tol 1e-8)"};
}

Verdict closed_form() {
  // Zero major flow: X stays at 1, Y_t = 2 - t, phi_t = -(2 - t).
  const ModelSpec s = bench::noiseless_model();
  std::vector<double> err;
  std::string list;
  for (std::size_t K : {8u, 16u, 32u, 64u}) {
    auto lat = bench::lattice(s, K);
    const auto sol = solve_minor_clearing(bench::market(s, lat, 1), NodeField(lat, 1));
    double e = 0.0;
    for (std::size_t v = 0; v < lat->size(); ++v) {
      const double t = lat->time(v);
      e = std::max({e, std::abs(sol.Y[0].at(v, 0) - (2.0 - t)), std::abs(sol.price.at(v, 0) + (2.0 - t))});
    }
    err.push_back(e);
    list += (list.empty() ? "" : ", ") + std::string("K=") + std::to_string(K) + ": " + fmt("%.2e", e);
  }
  const bool accurate = err.back() <= 2e-2;
  bool first_order = true;
  std::string ratios;
  for (std::size_t k = 1; k < err.size(); ++k) {
    const double r = err[k - 1] > 0.0 ? err[k] / err[k - 1] : std::nan("");
    first_order = first_order && r >= 0.4 && r <= 0.6;
    ratios += (ratios.empty() ? "" : ", ") + fmt("%.3g", r);
  }
  std::string d = "errors [" + list + "] (tol 2e-2: " + (accurate ? "met" : "missed") + "), doubling ratios [" +
                  ratios + "] (need [0.4, 0.6])";
  if (!first_order)
    d += "; the scheme reproduces this instance exactly (constant state, affine adjoint), so there is no "
         "first-order error to decay";
  return {accurate && first_order, d};
}

Verdict optimality_suite() {
  PerturbationOptions o;
  o.directions = 20;
  o.eps_grid = {0.0, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2};
  double min_dJ = std::numeric_limits<double>::infinity(), max_a1 = 0.0;
  std::size_t failed = 0;
  std::string parts;
  for (std::size_t n : {1u, 2u}) {
    const std::size_t N = n == 1 ? 4 : 2;
    const ModelSpec s = bench::lq(n, N);
    auto lat = bench::lattice(s, n == 1 ? 4 : 3);
    const auto pop = Population::from_atoms(s, bench::alternating_atoms(s, N));
    for (auto level : {PerturbationLevel::minor, PerturbationLevel::major_n, PerturbationLevel::major_mfg}) {
      const auto rep = perturbation_test(s, lat, level, pop, o);
      min_dJ = std::min(min_dJ, rep.min_delta_J);
      max_a1 = std::max(max_a1, rep.gradient_norm);
      failed += rep.failed_directions;
      parts += std::string(parts.empty() ? "" : ", ") + level_name(level) + "(n=" + std::to_string(n) +
               ") |a1|=" + fmt("%.1e", rep.gradient_norm);
    }
  }
  return {min_dJ >= -1e-9 && max_a1 <= 1e-6 && failed == 0,
          "min dJ = " + fmt("%.3e", min_dJ) + " (tol -1e-9), max |a1| = " + fmt("%.3e", max_a1) +
              " (tol 1e-6), failed fits " + std::to_string(failed) + "; " + parts};
}

Verdict mean_field_consistency() {
  double worst = 0.0;
  const double T = 1.0;
  for (std::size_t n : {1u, 2u}) {
    const ModelSpec base = bench::point_mass(bench::lq(n, 1));
    auto lat = bench::lattice(base, 4, T);
    const auto mfg = solve_mfg(base, lat);
    for (std::size_t N : {1u, 2u, 4u, 8u}) {
      const auto sol = solve_full_equilibrium(bench::market(base, lat, N));
      worst = std::max(worst, price_gap(sol.price, mfg.price_mfg));
    }
  }
  return {worst <= 1e-16 * T, "max price_gap = " + fmt("%.3e", worst) + " (tol 1e-16 T)"};
}

Verdict convergence_rate() {
  const ModelSpec s = bench::lq_scalar(8);
  StudyOptions o;
  o.grid = TimeGrid{1.0, 4};
  const auto rep = convergence_study(s, {8, 16, 32, 64}, 64, kDefaultSeed, o);
  bool shape = rep.fitted_C.has_value() && std::isfinite(*rep.fitted_C);
  if (shape)
    for (const auto& p : rep.per_N) shape = shape && p.mean_gap <= *rep.fitted_C * p.mean_rhs * (1.0 + 1e-12);
  // A single constant must also hold as N grows, so the gap/RHS ratio may not trend upward.
  const bool bounded = rep.ratio_slope.has_value() && *rep.ratio_slope <= 0.1;
  const bool rate = !rep.gap_fit.degenerate && rep.gap_fit.slope <= -0.35;
  return {rate && shape && bounded, "gap slope = " + fmt("%.3f", rep.gap_fit.slope) + " (tol <= -0.35), C = " +
                                        fmt("%.4g", rep.fitted_C.value_or(NAN)) + ", gap/RHS slope = " +
                                        fmt("%.3f", rep.ratio_slope.value_or(NAN)) + " (tol <= 0.1)"};
}

Verdict glivenko() {
  const auto rep = glivenko_cantelli_study({-1.0, 1.0}, {0.5, 0.5}, {8, 16, 32, 64, 128, 256, 512}, 400, kDefaultSeed);
  return {!rep.fit.degenerate && rep.fit.slope <= -0.35,
          "W2^2 slope = " + fmt("%.3f", rep.fit.slope) + " (tol <= -0.35, reference -0.5)"};
}

Verdict maturity() {
  double worst = 0.0;
  for (bool walk : {false, true}) {
    const ModelSpec s = bench::maturity_model(walk, 2);
    auto lat = bench::lattice(s, 4);
    auto mk = bench::market(s, lat, 2);
    const auto sol = solve_full_equilibrium(mk);
    const auto mfg = solve_mfg(s, lat);
    for (std::size_t v = lat->level_begin(lat->steps()); v < lat->size(); ++v) {
      const double c0 = mk->exo.c0.at(v, 0);
      worst = std::max({worst, std::abs(sol.price.at(v, 0) - c0), std::abs(sol.p0.at(v, 0) + c0),
                        std::abs(mfg.price_mfg.at(v, 0) - c0), std::abs(mfg.p0.at(v, 0) + c0),
                        std::abs(mfg.ybar.at(v, 0) + c0), std::abs(mfg.pbar.at(v, 0))});
      for (std::size_t i = 0; i < sol.agents(); ++i)
        worst = std::max({worst, std::abs(sol.Y[i].at(v, 0) + c0), std::abs(sol.P[i].at(v, 0))});
    }
  }
  return {worst <= 1e-12, "max terminal deviation = " + fmt("%.3e", worst) + " (tol 1e-12)"};
}

Verdict stability() {
  const ModelSpec homo3 = bench::lq_scalar(3);
  auto lat = bench::lattice(homo3, 4);
  const auto same = stability_gap(bench::heterogeneous_copy(homo3, {0, 0, 0}, 0.0), homo3, lat, {0, 1, 0});
  const double zero_gap = same.hetero.price.max_diff(same.homo.price);

  const ModelSpec homo = bench::point_mass(bench::lq_scalar(2));
  std::vector<double> eps{0.02, 0.04, 0.08}, inc;
  for (double e : eps) {
    const auto r = stability_gap(bench::heterogeneous_copy(homo, {1.0, 2.0}, e), homo, lat, {0, 0});
    inc.push_back(r.lhs_hetero - r.lhs_homo);
  }
  const bool positive = inc[0] > 0 && inc[1] > 0 && inc[2] > 0;
  const double sl = positive ? slope(eps, inc) : NAN;
  return {zero_gap <= 1e-12 && positive && std::abs(sl - 2.0) <= 0.2,
          "zero-heterogeneity price diff = " + fmt("%.3e", zero_gap) + " (tol 1e-12), LHS increment slope = " +
              fmt("%.4f", sl) + " (tol 2 +- 0.2)"};
}

Verdict metric_properties() {
  std::mt19937_64 g(kDefaultSeed);
  std::normal_distribution<double> nd;
  auto cloud = [&](std::size_t m, std::size_t dim) {
    std::vector<Vector> pts(m, Vector(static_cast<Eigen::Index>(dim)));
    for (auto& p : pts)
      for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = nd(g);
    return EmpiricalMeasure::uniform(std::move(pts));
  };
  bool sym = true;
  double tri = 0.0, sort_vs = 0.0, mean_excess = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    const std::size_t dim = k % 2 ? 2 : 1;
    const auto a = cloud(12, dim), b = cloud(12, dim), c = cloud(12, dim);
    const double ab = wasserstein2(a, b), bc = wasserstein2(b, c), ac = wasserstein2(a, c);
    sym = sym && ab == wasserstein2(b, a) && bc == wasserstein2(c, b);
    tri = std::max(tri, ac - ab - bc);
    mean_excess = std::max(mean_excess, (a.mean() - b.mean()).norm() - ab);
    const auto x = cloud(30, 1), y = cloud(30, 1);
    sort_vs = std::max(sort_vs, std::abs(wasserstein2(x, y) - wasserstein2_assignment(x, y)));
  }
  return {sym && tri <= 1e-12 && sort_vs <= 1e-12 && mean_excess <= 1e-12,
          std::string("symmetry ") + (sym ? "exact" : "broken") + ", triangle excess " + fmt("%.2e", tri) +
              ", sort vs assignment " + fmt("%.2e", sort_vs) + ", |mean gap| - W2 max " + fmt("%.2e", mean_excess) +
              " (tol 1e-12)"};
}

Verdict determinism() {
  std::vector<std::string> conv, pert, mfgs;
  const ModelSpec s = bench::lq_scalar(4);
  auto lat = bench::lattice(s, 3);
  const auto pop = Population::from_atoms(s, bench::alternating_atoms(s, 4));
  for (std::size_t th : {1u, 2u, 4u}) {
    StudyOptions so;
    so.grid = TimeGrid{1.0, 3};
    so.threads = th;
    std::ostringstream a, b, c;
    write_convergence_csv(a, convergence_study(s, {4, 8, 16}, 8, kDefaultSeed, so));
    PerturbationOptions po;
    po.directions = 6;
    po.threads = th;
    write_perturbation_csv(b, perturbation_test(s, lat, PerturbationLevel::major_n, pop, po));
    MfgOptions mo;
    mo.threads = th;
    write_mfg_csv(c, solve_mfg(s, lat, mo));
    conv.push_back(a.str());
    pert.push_back(b.str());
    mfgs.push_back(c.str());
  }
  auto same = [](const std::vector<std::string>& v) { return v[0] == v[1] && v[1] == v[2] && !v[0].empty(); };
  const bool ok = same(conv) && same(pert) && same(mfgs);
  return {ok, std::string("convergence, perturbation and mean-field CSVs at 1/2/4 threads: ") +
                  (ok ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> all{
      {1, "market clearing", market_clearing},       {2, "oracle equivalence", oracle_equivalence},
      {3, "closed-form benchmark", closed_form},     {4, "optimality", optimality_suite},
      {5, "mean-field consistency", mean_field_consistency}, {6, "convergence rate", convergence_rate},
      {7, "Glivenko-Cantelli", glivenko},            {8, "maturity mode", maturity},
      {9, "stability", stability},                   {10, "metric properties", metric_properties},
      {11, "determinism", determinism}};
  std::set<int> pick;
  for (int k = 1; k < argc; ++k) pick.insert(std::atoi(argv[k]));
  int failures = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
