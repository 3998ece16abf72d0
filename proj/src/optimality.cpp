#include "eqprice/optimality.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/QR>

#include "eqprice/errors.hpp"
#include "eqprice/parallel.hpp"
#include "eqprice/rng.hpp"

namespace eqprice {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

void check_field(const NodeField& f, const MarketData& m, const char* what) {
  if (f.empty() || f.width() != m.n() || !f.lattice().same_structure(*m.lattice))
    throw ValidationError(std::string(what) + " does not match the market lattice or dimension n");
}

Matrix inverse_checked(const Matrix& m, const char* what) {
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible()) throw AssumptionError(std::string(what) + " is singular");
  return lu.inverse();
}

}  // namespace

double cost_minor(const MarketPtr& market, std::size_t agent, const NodeField& price, const NodeField& alpha) {
  const MarketData& m = *market;
  if (agent >= m.population.size()) throw ValidationError("agent index out of range");
  check_field(price, m, "price");
  check_field(alpha, m, "control");
  const NoiseLattice& L = *m.lattice;
  const auto& c = m.coef(agent);
  const double dt = L.dt();
  std::vector<Vector> X(L.size());
  X[0] = m.population.agents[agent].xi;
  double J = 0.0;
  for (std::size_t v = 0; v < L.size(); ++v) {
    const Vector x = X[v];
    if (v > 0) {
      const Matrix& cf = c.cf.at(v);
      J += L.probability(v) * dt * (0.5 * x.dot(cf * x) + c.hf.vec(v).dot(x));
    }
    if (L.is_leaf(v)) {
      double g;
      if (m.spec.maturity_mode) {
        g = -m.exo.c0.vec(v).dot(x);
      } else {
        g = -m.spec.delta * price.vec(v).dot(x) + 0.5 * x.dot(c.cg.at(v) * x) + c.hg.vec(v).dot(x);
      }
      J += L.probability(v) * g;
      continue;
    }
    const Vector a = alpha.vec(v);
    J += L.probability(v) * dt * (price.vec(v).dot(a) + 0.5 * a.dot(m.exo.lambda.mat(v) * a));
    const Vector step = x + dt * (a + c.l.vec(v));
    const std::size_t c0 = L.first_child(v);
    for (std::size_t j = 0; j < L.fanout(); ++j) {
      X[c0 + j] = step;
      if (L.d0()) X[c0 + j] += c.sigma0.at(v) * L.increment(j);
    }
  }
  return J;
}

double cost_major_given_price(const MarketData& m, const NodeField& flow, const NodeField& price) {
  check_field(flow, m, "major flow");
  check_field(price, m, "price");
  const NoiseLattice& L = *m.lattice;
  const double dt = L.dt();
  const auto& major = m.spec.major;
  std::vector<Vector> x0(L.size());
  x0[0] = major.chi0;
  double J = 0.0;
  for (std::size_t v = 0; v < L.size(); ++v) {
    const Vector x = x0[v];
    const Vector c0 = m.exo.c0.vec(v);
    if (v > 0) J += L.probability(v) * dt * major.dfdx.value(L.time(v), x, c0);
    if (L.is_leaf(v)) {
      const double g = m.spec.maturity_mode ? -c0.dot(x) : major.dgdx.value(L.grid().T, x, c0);
      J += L.probability(v) * g;
      continue;
    }
    const Vector b = flow.vec(v);
    J += L.probability(v) * dt * (b.dot(price.vec(v)) + 0.5 * b.dot(m.exo.lambda0.mat(v) * b));
    const Vector step = x + dt * (b + m.major.l0.vec(v));
    const std::size_t first = L.first_child(v);
    for (std::size_t j = 0; j < L.fanout(); ++j) {
      x0[first + j] = step;
      if (L.d0()) x0[first + j] += m.major.s0.at(v) * L.increment(j);
    }
  }
  return J;
}

double cost_major(const MarketPtr& market, const NodeField& flow, const SolverChoice& choice) {
  const EquilibriumSolution sol = solve_minor_clearing(market, flow, choice);
  return cost_major_given_price(*market, flow, sol.price);
}

double cost_major_from_solution(const EquilibriumSolution& solution) {
  return cost_major_given_price(*solution.market, solution.beta_hat, solution.price);
}

NodeField mfg_price_for_flow(const MfgDataPtr& data, const NodeField& flow, const SolverChoice& choice) {
  const MarketData& m = *data->market;
  check_field(flow, m, "major flow");
  MeanMinorSystem sys(data, flow);
  SolverChoice linear = choice;
  linear.method = SolveMethod::direct;
  const NodeSolution sol = solve_system(sys, linear);
  NodeField price(m.lattice, m.n());
  for (std::size_t v = 0; v < m.lattice->size(); ++v)
    price.vec(v) = -sol.backward.vec(v) + m.exo.lambda.mat(v) * flow.vec(v);
  return price;
}

double cost_mfg(const MfgDataPtr& data, const NodeField& flow, const SolverChoice& choice) {
  return cost_major_given_price(*data->market, flow, mfg_price_for_flow(data, flow, choice));
}

// ---------------------------------------------------------------------------

double hamiltonian_minor(const ModelSpec& spec, std::size_t bundle, const PointContext& at, const Vector& ci,
                         const Vector& x, const Vector& y, const Vector& alpha, const Vector& phi) {
  const auto& b = spec.minor_of(bundle);
  const Matrix lam = spec.lambda_minor.evaluate(at.t, at.c0);
  const Vector l = b.l.evaluate(at.t, at.c0, ci).col(0);
  const Matrix cf = b.cf.evaluate(at.t, at.c0, ci);
  const Vector hf = b.hf.evaluate(at.t, at.c0, ci).col(0);
  return y.dot(alpha + l) + phi.dot(alpha) + 0.5 * alpha.dot(lam * alpha) + 0.5 * x.dot(cf * x) + hf.dot(x);
}

Vector minor_minimizer(const Matrix& lambda, const Vector& y, const Vector& phi) {
  return -inverse_checked(lambda, "Lambda") * (y + phi);
}

double hamiltonian_n(const ModelSpec& spec, const PointContext& at, const SystemArgs& a, const Vector& beta) {
  const std::size_t N = a.x.size();
  if (N == 0 || a.y.size() != N || a.p.size() != N || a.r.size() != N || a.ci.size() != N)
    throw ValidationError("system Hamiltonian needs one (x, y, p, r, c) tuple per agent");
  const double dN = static_cast<double>(N);
  const ScaledMajor major(spec.major, N);
  const Matrix lam = spec.lambda_minor.evaluate(at.t, at.c0);
  const Matrix lam0 = spec.lambda_major.evaluate(at.t, at.c0);
  const Matrix lbar = inverse_checked(lam, "Lambda");
  Vector my = Vector::Zero(beta.size());
  for (const auto& y : a.y) my += y / dN;
  double H = a.p0.dot(beta + major.l0(at.t, at.c0));
  for (std::size_t i = 0; i < N; ++i) {
    const auto& b = spec.minor_of(i);
    const Vector l = b.l.evaluate(at.t, at.c0, a.ci[i]).col(0);
    const Vector dfx = b.cf.evaluate(at.t, at.c0, a.ci[i]) * a.x[i] + b.hf.evaluate(at.t, at.c0, a.ci[i]).col(0);
    H += a.p[i].dot(-lbar * (a.y[i] - my) - beta / dN + l);
    H += a.r[i].dot(-dfx);
  }
  H += beta.dot(-my + lam * beta / dN) + 0.5 * beta.dot(lam0 * beta / dN);
  H += major.f0(at.t, a.x0, at.c0);
  return H;
}

Vector beta_minimizer_n(const Matrix& lambda0, const Matrix& lambda, const Vector& p0, const std::vector<Vector>& y,
                        const std::vector<Vector>& p) {
  if (y.empty() || y.size() != p.size()) throw ValidationError("beta minimizer needs matching y and p lists");
  const double N = static_cast<double>(y.size());
  Vector my = Vector::Zero(p0.size()), mp = Vector::Zero(p0.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    my += y[i] / N;
    mp += p[i] / N;
  }
  return N * inverse_checked(lambda0 + 2.0 * lambda, "Lambda0 + 2 Lambda") * (-p0 + my + mp);
}

double hamiltonian_mfg(const ModelSpec& spec, const PointContext& at, const MfgArgs& a, const Vector& beta) {
  const auto& b = spec.minor;
  const Matrix lam = spec.lambda_minor.evaluate(at.t, at.c0);
  const Matrix lam0 = spec.lambda_major.evaluate(at.t, at.c0);
  const Matrix lbar = inverse_checked(lam, "Lambda");
  const Vector l0 = spec.major.l0.evaluate(at.t, at.c0).col(0);
  const Vector l = b.l.evaluate(at.t, at.c0, a.c1).col(0);
  const Vector dfx = b.cf.evaluate(at.t, at.c0, a.c1) * a.x1 + b.hf.evaluate(at.t, at.c0, a.c1).col(0);
  return a.p0.dot(beta + l0) + a.p1.dot(-lbar * (a.y1 - a.ybar) + l) + a.pbar.dot(-beta) + a.r1.dot(-dfx) +
         beta.dot(-a.ybar + lam * beta) + 0.5 * beta.dot(lam0 * beta) + spec.major.dfdx.value(at.t, a.x0, at.c0);
}

Vector beta_minimizer_mfg(const Matrix& lambda0, const Matrix& lambda, const Vector& p0, const Vector& ybar,
                          const Vector& pbar) {
  return inverse_checked(lambda0 + 2.0 * lambda, "Lambda0 + 2 Lambda") * (-p0 + ybar + pbar);
}

// ---------------------------------------------------------------------------

const char* level_name(PerturbationLevel level) {
  switch (level) {
    case PerturbationLevel::minor:
      return "minor";
    case PerturbationLevel::major_n:
      return "major-N";
    case PerturbationLevel::major_mfg:
      return "major-mfg";
  }
  return "?";
}

NodeField random_direction(const LatticePtr& lattice, std::size_t width, std::uint64_t seed, std::size_t direction) {
  const NoiseLattice& L = *lattice;
  NodeField eta(lattice, width);
  StreamRng rng = StreamRng::derive(seed, 0x6469726563ULL, direction);
  const std::size_t interior = L.level_begin(L.steps());
  double norm2 = 0.0;
  for (std::size_t v = 0; v < interior; ++v) {
    for (std::size_t c = 0; c < width; ++c) eta.at(v, c) = rng.normal();
    norm2 += L.probability(v) * L.dt() * eta.vec(v).squaredNorm();
  }
  const double s = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
  for (std::size_t v = 0; v < interior; ++v) eta.vec(v) *= s;
  return eta;
}

DirectionFit fit_quadratic(const std::vector<double>& eps, const std::vector<double>& dJ) {
  if (eps.size() != dJ.size() || eps.size() < 3) throw ValidationError("quadratic fit needs at least 3 points");
  Matrix A(idx(eps.size()), 3);
  Vector y(idx(eps.size()));
  for (std::size_t k = 0; k < eps.size(); ++k) {
    A(idx(k), 0) = 1.0;
    A(idx(k), 1) = eps[k];
    A(idx(k), 2) = eps[k] * eps[k];
    y(idx(k)) = dJ[k];
  }
  const Vector c = A.colPivHouseholderQr().solve(y);
  DirectionFit f;
  f.a0 = c(0);
  f.a1 = c(1);
  f.a2 = c(2);
  return f;
}

namespace {

NodeField axpy(const NodeField& base, double eps, const NodeField& eta) {
  NodeField out = base;
  for (std::size_t k = 0; k < out.data().size(); ++k) out.data()[k] += eps * eta.data()[k];
  return out;
}

}  // namespace

PerturbationReport perturbation_test(const ModelSpec& spec, const LatticePtr& lattice, PerturbationLevel level,
                                     const Population& population, const PerturbationOptions& options) {
  if (options.directions == 0) throw ValidationError("perturbation test needs at least one direction");
  if (std::find(options.eps_grid.begin(), options.eps_grid.end(), 0.0) == options.eps_grid.end())
    throw ValidationError("eps grid must contain 0");
  PerturbationReport rep;
  rep.level = level;
  rep.directions = options.directions;
  rep.eps_grid = options.eps_grid;
  const std::size_t n = spec.dims.n;

  // Cost functional J(base + eps eta) and the optimum `base`.
  std::function<double(const NodeField&)> J;
  NodeField base;
  SolverChoice inner = options.choice;
  inner.direct.threads = 1;
  inner.picard.threads = 1;
  if (level == PerturbationLevel::major_mfg) {
    MfgOptions mo;
    mo.choice = options.choice;
    mo.threads = options.threads;
    mo.check = options.check;
    const MfgSolution mfg = solve_mfg(spec, lattice, mo);
    base = mfg.beta_hat;
    MfgDataPtr data = mfg.data;
    J = [data, inner](const NodeField& b) { return cost_mfg(data, b, inner); };
  } else {
    auto market = MarketData::build(spec, lattice, population);
    const EquilibriumSolution eq = solve_full_equilibrium(market, options.choice, options.check);
    if (level == PerturbationLevel::major_n) {
      base = eq.beta_hat;
      J = [market, inner](const NodeField& b) { return cost_major(market, b, inner); };
    } else {
      if (options.agent >= market->population.size()) throw ValidationError("perturbed agent out of range");
      base = eq.alpha_hat[options.agent];
      NodeField price = eq.price;
      const std::size_t agent = options.agent;
      J = [market, price, agent](const NodeField& a) { return cost_minor(market, agent, price, a); };
    }
  }
  rep.base_cost = J(base);

  rep.delta_J.assign(options.directions, std::vector<double>(options.eps_grid.size(), 0.0));
  rep.fits.resize(options.directions);
  parallel_for(options.directions, options.threads, [&](std::size_t d) {
    const NodeField eta = random_direction(lattice, n, options.seed, d);
    try {
      for (std::size_t k = 0; k < options.eps_grid.size(); ++k) {
        const double e = options.eps_grid[k];
        rep.delta_J[d][k] = e == 0.0 ? 0.0 : J(axpy(base, e, eta)) - rep.base_cost;
      }
      rep.fits[d] = fit_quadratic(options.eps_grid, rep.delta_J[d]);
    } catch (const std::exception& ex) {
      rep.fits[d].failed = true;
      rep.fits[d].error = ex.what();
    }
  });
  rep.min_delta_J = std::numeric_limits<double>::infinity();
  rep.min_curvature = std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < options.directions; ++d) {
    if (rep.fits[d].failed) {
      ++rep.failed_directions;
      continue;
    }
    for (double v : rep.delta_J[d]) rep.min_delta_J = std::min(rep.min_delta_J, v);
    rep.gradient_norm = std::max(rep.gradient_norm, std::abs(rep.fits[d].a1));
    rep.min_curvature = std::min(rep.min_curvature, rep.fits[d].a2);
  }
  return rep;
}

}  // namespace eqprice
