#include "eqprice/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "eqprice/errors.hpp"
#include "eqprice/parallel.hpp"
#include "eqprice/rng.hpp"

namespace eqprice {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

void check_nonempty(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.size() == 0 || b.size() == 0) throw ValidationError("empirical measures must be non-empty");
  if (a.dim() != b.dim()) throw ValidationError("empirical measures live in different dimensions");
}

/// 1-D optimal coupling cost sum |a - b|^p under the quantile coupling.
double quantile_cost(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p) {
  auto order = [](const EmpiricalMeasure& m) {
    std::vector<std::size_t> o(m.size());
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](std::size_t i, std::size_t j) { return m.points[i](0) < m.points[j](0); });
    return o;
  };
  const auto oa = order(a), ob = order(b);
  auto cost = [p](double x) { return p == 2.0 ? x * x : std::pow(std::abs(x), p); };
  double total = 0.0;
  if (a.is_uniform() && b.is_uniform() && a.size() == b.size()) {
    for (std::size_t k = 0; k < oa.size(); ++k) total += cost(a.points[oa[k]](0) - b.points[ob[k]](0));
    return total / static_cast<double>(a.size());
  }
  std::size_t i = 0, j = 0;
  double ra = a.weight(oa[0]), rb = b.weight(ob[0]);
  while (i < oa.size() && j < ob.size()) {
    const double m = std::min(ra, rb);
    total += m * cost(a.points[oa[i]](0) - b.points[ob[j]](0));
    ra -= m;
    rb -= m;
    if (ra <= 1e-15 && ++i < oa.size()) ra = a.weight(oa[i]);
    if (rb <= 1e-15 && ++j < ob.size()) rb = b.weight(ob[j]);
  }
  return total;
}

}  // namespace

EmpiricalMeasure EmpiricalMeasure::uniform(std::vector<Vector> points) {
  EmpiricalMeasure m;
  m.points = std::move(points);
  return m;
}

EmpiricalMeasure EmpiricalMeasure::weighted(std::vector<Vector> points, std::vector<double> weights) {
  if (points.size() != weights.size()) throw ValidationError("one weight per point is required");
  double s = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("empirical measure weights must be positive");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12) throw ValidationError("empirical measure weights must sum to 1");
  EmpiricalMeasure m;
  m.points = std::move(points);
  m.weights = std::move(weights);
  return m;
}

EmpiricalMeasure EmpiricalMeasure::scalar(const std::vector<double>& values) {
  std::vector<Vector> pts;
  pts.reserve(values.size());
  for (double x : values) pts.push_back(Vector::Constant(1, x));
  return uniform(std::move(pts));
}

Vector EmpiricalMeasure::mean() const {
  Vector m = Vector::Zero(idx(dim()));
  for (std::size_t i = 0; i < size(); ++i) m += weight(i) * points[i];
  return m;
}

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const std::size_t n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw ValidationError("assignment needs a square cost matrix");
  if (n > kAssignmentCap) throw SizingError("assignment is capped at " + std::to_string(kAssignmentCap) + " atoms");
  const double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting path with potentials; rows and columns are 1-based, 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(idx(i0 - 1), idx(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of(n);
  for (std::size_t j = 1; j <= n; ++j) col_of[p[j] - 1] = j - 1;
  return col_of;
}

double wasserstein2_assignment(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  check_nonempty(a, b);
  if (!a.is_uniform() || !b.is_uniform() || a.size() != b.size())
    throw UnsupportedError("exact assignment needs two equally weighted clouds of the same size");
  const std::size_t n = a.size();
  if (n > kAssignmentCap) throw SizingError("assignment is capped at " + std::to_string(kAssignmentCap) + " atoms");
  Matrix cost(idx(n), idx(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost(idx(i), idx(j)) = (a.points[i] - b.points[j]).squaredNorm();
  const auto match = solve_assignment(cost);
  // Summed in sorted order so that swapping the arguments gives the same bits.
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) terms[i] = cost(idx(i), idx(match[i]));
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return std::sqrt(std::max(0.0, total / static_cast<double>(n)));
}

double wasserstein2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  check_nonempty(a, b);
  if (a.dim() == 1) return std::sqrt(std::max(0.0, quantile_cost(a, b, 2.0)));
  return wasserstein2_assignment(a, b);
}

double wasserstein1(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  check_nonempty(a, b);
  if (a.dim() != 1) throw UnsupportedError("W1 is only available for n = 1");
  return quantile_cost(a, b, 1.0);
}

double epsilon_rate(std::size_t N, std::size_t n) {
  if (N < 1 || n < 1) throw ValidationError("epsilon_rate needs N >= 1 and n >= 1");
  const double e = std::pow(static_cast<double>(N), -2.0 / static_cast<double>(std::max<std::size_t>(n, 4)));
  return e * (1.0 + (N == 4 ? std::log(static_cast<double>(N)) : 0.0));
}

double price_gap(const NodeField& a, const NodeField& b) {
  if (a.empty() || b.empty()) throw ValidationError("price_gap on an empty field");
  if (!a.lattice().same_structure(b.lattice()) || a.width() != b.width())
    throw ValidationError("price fields live on incompatible lattices");
  const NoiseLattice& L = a.lattice();
  double total = 0.0;
  for (std::size_t v = 0; v < L.level_begin(L.steps()); ++v)
    total += L.probability(v) * L.dt() * (a.vec(v) - b.vec(v)).squaredNorm();
  return total;
}

SlopeFit fit_loglog(const std::vector<std::size_t>& N, const std::vector<double>& y, double floor) {
  SlopeFit fit;
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < N.size(); ++k) {
    if (N[k] == 4 || !(y[k] >= floor) || !std::isfinite(y[k])) {
      fit.excluded.push_back(N[k]);
      continue;
    }
    lx.push_back(std::log(static_cast<double>(N[k])));
    ly.push_back(std::log(y[k]));
  }
  fit.points = lx.size();
  if (lx.size() < 3) return fit;
  const double m = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / m;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
  }
  if (!(sxx > 0.0)) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    const double r = ly[k] - fit.intercept - fit.slope * lx[k];
    sse += r * r;
  }
  fit.slope_se = std::sqrt(sse / (m - 2.0) / sxx);
  fit.degenerate = false;
  return fit;
}

// ---------------------------------------------------------------------------

ConvergenceRow wasserstein_terms(const MfgSolution& mfg, const std::vector<std::size_t>& agent_atoms) {
  const MarketData& m = *mfg.data->market;
  const NoiseLattice& L = *m.lattice;
  const std::size_t A = mfg.atoms();
  if (agent_atoms.empty()) throw ValidationError("wasserstein_terms needs at least one agent");
  std::vector<std::size_t> counts(A, 0);
  for (std::size_t a : agent_atoms) {
    if (a >= A) throw ValidationError("agent atom index out of range");
    ++counts[a];
  }
  std::vector<std::size_t> held;
  std::vector<double> emp_w;
  for (std::size_t a = 0; a < A; ++a)
    if (counts[a]) {
      held.push_back(a);
      emp_w.push_back(static_cast<double>(counts[a]) / static_cast<double>(agent_atoms.size()));
    }
  std::vector<NodeField> ys, gs_x;
  for (std::size_t a = 0; a < A; ++a) {
    ys.push_back(mfg.atom_y(a));
    gs_x.push_back(mfg.atom_x(a));
  }
  auto w2sq = [&](auto&& value) {
    std::vector<Vector> ref, emp;
    for (std::size_t a = 0; a < A; ++a) ref.push_back(value(a));
    for (std::size_t a : held) emp.push_back(value(a));
    const double w = wasserstein2(EmpiricalMeasure::weighted(std::move(emp), emp_w),
                                  EmpiricalMeasure::weighted(std::move(ref), mfg.weights));
    return w * w;
  };
  ConvergenceRow row;
  row.N = agent_atoms.size();
  for (std::size_t v = 0; v < L.size(); ++v) {
    const double pi = L.probability(v);
    if (L.is_leaf(v)) {
      row.w2_g += pi * w2sq([&](std::size_t a) -> Vector {
        return m.coef(a).cg.at(v) * gs_x[a].vec(v) + m.coef(a).hg.vec(v);
      });
      row.w2_rT += pi * w2sq([&](std::size_t a) -> Vector { return mfg.atom_r(a).vec(v); });
    } else {
      row.int_w2_y += pi * L.dt() * w2sq([&](std::size_t a) -> Vector { return ys[a].vec(v); });
      row.int_w2_p += pi * L.dt() * w2sq([&](std::size_t a) -> Vector { return mfg.atom_p(a).vec(v); });
    }
  }
  row.epsilon_N = epsilon_rate(row.N, m.n());
  return row;
}

namespace {

std::uint64_t study_stream(std::size_t N, std::size_t r) {
  return (static_cast<std::uint64_t>(N) << 32) | static_cast<std::uint64_t>(r);
}

void mean_se(const std::vector<double>& x, double& mean, double& se) {
  const double m = static_cast<double>(x.size());
  mean = std::accumulate(x.begin(), x.end(), 0.0) / m;
  if (x.size() < 2) {
    se = 0.0;
    return;
  }
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  se = std::sqrt(ss / (m - 1.0) / m);
}

}  // namespace

ConvergenceReport convergence_study(const ModelSpec& spec, const std::vector<std::size_t>& N_list,
                                    std::size_t resamples, std::uint64_t seed, const StudyOptions& options) {
  if (!spec.homogeneous()) throw UnsupportedError("the convergence study needs a homogeneous model");
  if (N_list.empty() || resamples == 0) throw ValidationError("convergence study needs N values and resamples");
  for (std::size_t N : N_list)
    if (N == 0) throw ValidationError("N must be positive");
  LatticePtr lattice = build_lattice(options.grid, spec.dims, options.branching);
  {
    // Budget check for the largest market before any solve.
    const std::size_t Nmax = *std::max_element(N_list.begin(), N_list.end());
    const std::size_t unknowns = lattice->size() * spec.dims.n * (2 * (1 + 2 * Nmax) + 5);
    if (unknowns > options.choice.direct.unknown_budget)
      throw SizingError("largest market needs " + std::to_string(unknowns) + " unknowns, budget is " +
                        std::to_string(options.choice.direct.unknown_budget));
  }
  MfgOptions mo;
  mo.choice = options.choice;
  mo.threads = options.threads;
  mo.check = options.check;
  const MfgSolution mfg = solve_mfg(spec, lattice, mo);

  ConvergenceReport rep;
  rep.resamples = resamples;
  rep.seed = seed;
  rep.rows.resize(N_list.size() * resamples);
  SolverChoice inner = options.choice;
  inner.direct.threads = 1;
  inner.picard.threads = 1;
  parallel_for(rep.rows.size(), options.threads, [&](std::size_t task) {
    const std::size_t N = N_list[task / resamples], r = task % resamples;
    const auto atoms = sample_idiosyncratic(spec.atoms, N, seed, study_stream(N, r));
    auto market = MarketData::build(spec, lattice, Population::from_atoms(spec, atoms));
    const EquilibriumSolution sol = solve_full_equilibrium(market, inner, false);
    ConvergenceRow row = wasserstein_terms(mfg, atoms);
    row.resample = r;
    row.price_gap = price_gap(sol.price, mfg.price_mfg);
    rep.rows[task] = row;
  });

  std::vector<double> gaps, rhs;
  for (std::size_t k = 0; k < N_list.size(); ++k) {
    std::vector<double> g, h;
    for (std::size_t r = 0; r < resamples; ++r) {
      g.push_back(rep.rows[k * resamples + r].price_gap);
      h.push_back(rep.rows[k * resamples + r].rhs());
    }
    ConvergenceSummary s;
    s.N = N_list[k];
    s.epsilon_N = epsilon_rate(s.N, spec.dims.n);
    mean_se(g, s.mean_gap, s.gap_se);
    mean_se(h, s.mean_rhs, s.rhs_se);
    rep.per_N.push_back(s);
    gaps.push_back(s.mean_gap);
    rhs.push_back(s.mean_rhs);
  }
  rep.gap_fit = fit_loglog(N_list, gaps);
  rep.rhs_fit = fit_loglog(N_list, rhs);
  rep.degenerate = std::all_of(gaps.begin(), gaps.end(), [](double g) { return g < 1e-14; });
  if (!rep.degenerate) {
    std::vector<std::size_t> Ns;
    std::vector<double> ratios;
    double C = 0.0;
    bool ok = true;
    for (std::size_t k = 0; k < N_list.size(); ++k) {
      if (!(rhs[k] > 0.0)) {
        if (gaps[k] >= 1e-14) ok = false;
        continue;
      }
      C = std::max(C, gaps[k] / rhs[k]);
      Ns.push_back(N_list[k]);
      ratios.push_back(gaps[k] / rhs[k]);
    }
    if (ok) {
      rep.fitted_C = C;
      SlopeFit rf = fit_loglog(Ns, ratios);
      if (!rf.degenerate) rep.ratio_slope = rf.slope;
    }
  }
  return rep;
}

GlivenkoReport glivenko_cantelli_study(const std::vector<double>& values, const std::vector<double>& weights,
                                       const std::vector<std::size_t>& N_list, std::size_t resamples,
                                       std::uint64_t seed, std::size_t threads) {
  if (values.size() != weights.size() || values.empty()) throw ValidationError("one weight per atom is required");
  std::vector<Atom> atoms;
  std::vector<Vector> ref_pts;
  for (std::size_t a = 0; a < values.size(); ++a) {
    atoms.push_back(Atom{weights[a], Vector::Constant(1, values[a]), Vector::Zero(1)});
    ref_pts.push_back(Vector::Constant(1, values[a]));
  }
  const EmpiricalMeasure ref = EmpiricalMeasure::weighted(ref_pts, weights);
  std::vector<double> w2(N_list.size() * resamples);
  const std::uint64_t gc_seed = mix64(seed ^ 0x676c6976656e6b6fULL);
  parallel_for(w2.size(), threads, [&](std::size_t task) {
    const std::size_t N = N_list[task / resamples], r = task % resamples;
    const auto draw = sample_idiosyncratic(atoms, N, gc_seed, study_stream(N, r));
    std::vector<Vector> pts;
    for (std::size_t a : draw) pts.push_back(ref_pts[a]);
    const double w = wasserstein2(EmpiricalMeasure::uniform(std::move(pts)), ref);
    w2[task] = w * w;
  });
  GlivenkoReport rep;
  std::vector<double> means;
  for (std::size_t k = 0; k < N_list.size(); ++k) {
    GlivenkoRow row;
    row.N = N_list[k];
    row.epsilon_N = epsilon_rate(row.N, 1);
    std::vector<double> x(w2.begin() + static_cast<std::ptrdiff_t>(k * resamples),
                          w2.begin() + static_cast<std::ptrdiff_t>((k + 1) * resamples));
    mean_se(x, row.mean_w2sq, row.se);
    rep.rows.push_back(row);
    means.push_back(row.mean_w2sq);
  }
  rep.fit = fit_loglog(N_list, means);
  return rep;
}

// ---------------------------------------------------------------------------

StabilityReport stability_gap(const ModelSpec& hetero_spec, const ModelSpec& homo_spec, const LatticePtr& lattice,
                              const std::vector<std::size_t>& atoms, const SolverChoice& choice, bool check) {
  if (!homo_spec.homogeneous()) throw ValidationError("the reference spec must be homogeneous");
  if (hetero_spec.dims.n != homo_spec.dims.n || hetero_spec.dims.d0 != homo_spec.dims.d0)
    throw ValidationError("heterogeneous and homogeneous specs differ in dimensions");
  if (hetero_spec.atoms.size() != homo_spec.atoms.size())
    throw ValidationError("heterogeneous and homogeneous specs must share the atom law");
  StabilityReport rep;
  rep.N = atoms.size();
  auto homo_market = MarketData::build(homo_spec, lattice, Population::from_atoms(homo_spec, atoms));
  auto hetero_market = MarketData::build(hetero_spec, lattice, Population::from_atoms(hetero_spec, atoms));
  rep.homo = solve_full_equilibrium(homo_market, choice, check);
  rep.hetero = solve_full_equilibrium(hetero_market, choice, check);
  MfgOptions mo;
  mo.choice = choice;
  mo.check = check;
  const MfgSolution mfg = solve_mfg(homo_spec, lattice, mo);
  rep.lhs_hetero = price_gap(rep.hetero.price, mfg.price_mfg);
  rep.lhs_homo = price_gap(rep.homo.price, mfg.price_mfg);
  rep.hetero_homo_gap = price_gap(rep.hetero.price, rep.homo.price);
  rep.wasserstein = wasserstein_terms(mfg, atoms);

  const NoiseLattice& L = *lattice;
  const double inv_N = 1.0 / static_cast<double>(rep.N);
  const double dr = homo_spec.delta / (1.0 - homo_spec.delta);
  const auto& ho = homo_spec.minor;
  for (std::size_t v = 0; v < L.size(); ++v) {
    const double t = L.time(v), pi = L.probability(v), T = L.grid().T;
    const Vector c0 = homo_market->exo.c0.vec(v);
    Vector mR = Vector::Zero(idx(homo_spec.dims.n));
    for (std::size_t i = 0; i < rep.N; ++i) mR += inv_N * rep.homo.R[i].vec(v);
    for (std::size_t i = 0; i < rep.N; ++i) {
      const auto& he = hetero_spec.minor_of(i);
      const Vector& ci = homo_market->population.agents[i].ci;
      const Vector X = rep.homo.X[i].vec(v), R = rep.homo.R[i].vec(v);
      if (L.is_leaf(v)) {
        const Matrix dcg = he.cg.evaluate(T, c0, ci) - ho.cg.evaluate(T, c0, ci);
        const Vector dhg = he.hg.evaluate(T, c0, ci) - ho.hg.evaluate(T, c0, ci);
        rep.d_terminal_x += pi * inv_N * (dcg * X + dhg).squaredNorm();
        rep.d_terminal_r += pi * inv_N * (dcg * (R + dr * mR)).squaredNorm();
        continue;
      }
      const double w = pi * L.dt() * inv_N;
      const Matrix dcf = he.cf.evaluate(t, c0, ci) - ho.cf.evaluate(t, c0, ci);
      const Vector dhf = he.hf.evaluate(t, c0, ci) - ho.hf.evaluate(t, c0, ci);
      rep.d_fx += w * (dcf * X + dhf).squaredNorm();
      rep.d_cfR += w * (dcf * R).squaredNorm();
      rep.d_l += w * (he.l.evaluate(t, c0, ci) - ho.l.evaluate(t, c0, ci)).squaredNorm();
      if (homo_spec.dims.d0)
        rep.d_sigma0 += w * (he.sigma0.evaluate(t, c0, ci) - ho.sigma0.evaluate(t, c0, ci)).squaredNorm();
    }
  }
  return rep;
}

}  // namespace eqprice
