#include "eqprice/fbsde.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "eqprice/errors.hpp"
#include "eqprice/parallel.hpp"

namespace eqprice {

namespace {

using Index = Eigen::Index;
using Triplet = Eigen::Triplet<double>;

Index idx(std::size_t v) { return static_cast<Index>(v); }

void check_probabilities(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x;
  if (std::abs(s - 1.0) > 1e-12) throw ValidationError("lattice corruption: child probabilities sum to " + std::to_string(s));
}

}  // namespace

BackwardStep backward_step(const std::vector<Vector>& child_values, const std::vector<double>& probabilities,
                           const std::vector<Vector>& driver_values, double dt) {
  if (child_values.empty() || child_values.size() != probabilities.size() || driver_values.size() != child_values.size())
    throw ValidationError("backward_step needs one value, probability and driver per child");
  check_probabilities(probabilities);
  BackwardStep out;
  out.value = Vector::Zero(child_values.front().size());
  for (std::size_t c = 0; c < child_values.size(); ++c)
    out.value += probabilities[c] * (child_values[c] + dt * driver_values[c]);
  out.increments.reserve(child_values.size());
  for (std::size_t c = 0; c < child_values.size(); ++c)
    out.increments.push_back(child_values[c] + dt * driver_values[c] - out.value);
  return out;
}

BackwardStep backward_step(const std::vector<Vector>& child_values, const std::vector<double>& probabilities,
                           const Vector& driver_value, double dt) {
  return backward_step(child_values, probabilities, std::vector<Vector>(child_values.size(), driver_value), dt);
}

BackwardStep backward_step(const NoiseLattice& lattice, std::size_t node, const std::vector<Vector>& child_values,
                           const Vector& driver_value) {
  if (lattice.is_leaf(node)) throw ValidationError("backward_step at a leaf");
  std::vector<double> p(lattice.fanout());
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = lattice.child_probability(j);
  return backward_step(child_values, p, driver_value, lattice.dt());
}

namespace {

struct Sizes {
  std::size_t nF, nB, nA, S;
  explicit Sizes(const FbsdeSystem& s)
      : nF(s.forward_size()), nB(s.backward_size()), nA(s.aggregate_size()), S(nF + nB + nA) {}
};

/// Sparse Jacobian of an affine local map with respect to (F, B, A) plus its offset.
struct LocalJacobian {
  std::vector<Triplet> dF, dB, dA;
  Vector offset;
};

template <class Eval>
LocalJacobian probe(std::size_t out_size, const Sizes& sz, bool use_b, bool use_a, Eval&& eval) {
  LocalJacobian J;
  Vector F = Vector::Zero(idx(sz.nF)), B = Vector::Zero(idx(sz.nB)), A = Vector::Zero(idx(sz.nA));
  Vector out = Vector::Zero(idx(out_size));
  eval(F, B, A, out, Terms::all);
  J.offset = out;
  auto sweep = [&](Vector& slot, std::size_t count, std::vector<Triplet>& dst) {
    for (std::size_t j = 0; j < count; ++j) {
      slot(idx(j)) = 1.0;
      out.setZero();
      eval(F, B, A, out, Terms::linear);
      slot(idx(j)) = 0.0;
      for (Index r = 0; r < out.size(); ++r)
        if (out(r) != 0.0) dst.emplace_back(static_cast<int>(r), static_cast<int>(j), out(r));
    }
  };
  sweep(F, sz.nF, J.dF);
  if (use_b) sweep(B, sz.nB, J.dB);
  if (use_a) sweep(A, sz.nA, J.dA);
  return J;
}

struct NodeRows {
  std::vector<Triplet> entries;
};

}  // namespace

NodeSolution solve_direct(const FbsdeSystem& system, const DirectOptions& options) {
  if (!system.affine()) throw UnsupportedError("solve_direct needs an affine system; use solve_picard");
  const LatticePtr& Lp = system.lattice();
  const NoiseLattice& L = *Lp;
  const Sizes sz(system);
  const std::size_t nodes = L.size();
  const double dt = L.dt();
  if (sz.S == 0) throw ValidationError("system has no states");
  if (nodes * sz.S > options.unknown_budget)
    throw SizingError("direct solve needs " + std::to_string(nodes * sz.S) + " unknowns, budget is " +
                      std::to_string(options.unknown_budget));
  const std::size_t nU = nodes * sz.S;
  Vector rhs = Vector::Zero(idx(nU));
  std::vector<NodeRows> rows(nodes);

  auto col_F = [&](std::size_t v, std::size_t j) { return static_cast<int>(v * sz.S + j); };
  auto col_B = [&](std::size_t v, std::size_t j) { return static_cast<int>(v * sz.S + sz.nF + j); };
  auto col_A = [&](std::size_t v, std::size_t j) { return static_cast<int>(v * sz.S + sz.nF + sz.nB + j); };

  parallel_for(nodes, options.threads, [&](std::size_t v) {
    auto& E = rows[v].entries;
    // Aggregate rows: A_v - agg(F_v, B_v) = offset.
    if (sz.nA > 0) {
      LocalJacobian J = probe(sz.nA, sz, true, false,
                              [&](VecCRef F, VecCRef B, VecCRef, VecRef out, Terms t) { system.aggregates(v, F, B, out, t); });
      for (std::size_t r = 0; r < sz.nA; ++r) {
        E.emplace_back(col_A(v, r), col_A(v, r), 1.0);
        rhs(col_A(v, r)) = J.offset(idx(r));
      }
      for (const auto& t : J.dF) E.emplace_back(col_A(v, t.row()), col_F(v, t.col()), -t.value());
      for (const auto& t : J.dB) E.emplace_back(col_A(v, t.row()), col_B(v, t.col()), -t.value());
    }
    if (v == 0) {
      Vector init = Vector::Zero(idx(sz.nF));
      system.initial(init);
      for (std::size_t r = 0; r < sz.nF; ++r) {
        E.emplace_back(col_F(0, r), col_F(0, r), 1.0);
        rhs(col_F(0, r)) = init(idx(r));
      }
    }
    if (L.is_leaf(v)) {
      LocalJacobian J = probe(sz.nB, sz, false, true,
                              [&](VecCRef F, VecCRef, VecCRef A, VecRef out, Terms t) { system.terminal(v, F, A, out, t); });
      for (std::size_t r = 0; r < sz.nB; ++r) {
        E.emplace_back(col_B(v, r), col_B(v, r), 1.0);
        rhs(col_B(v, r)) = J.offset(idx(r));
      }
      for (const auto& t : J.dF) E.emplace_back(col_B(v, t.row()), col_F(v, t.col()), -t.value());
      for (const auto& t : J.dA) E.emplace_back(col_B(v, t.row()), col_A(v, t.col()), -t.value());
      return;
    }
    // Forward rows of every child c: F_c - F_v - dt*drift(v) = diffusion(v) dW_c + dt*offset.
    LocalJacobian D = probe(sz.nF, sz, true, true, [&](VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms t) {
      system.drift(v, F, B, A, out, t);
    });
    Vector noise = Vector::Zero(idx(sz.nF));
    const std::size_t c0 = L.first_child(v);
    for (std::size_t j = 0; j < L.fanout(); ++j) {
      const std::size_t c = c0 + j;
      noise.setZero();
      system.diffusion(v, L.increment(j), noise);
      for (std::size_t r = 0; r < sz.nF; ++r) {
        E.emplace_back(col_F(c, r), col_F(c, r), 1.0);
        E.emplace_back(col_F(c, r), col_F(v, r), -1.0);
        rhs(col_F(c, r)) = dt * D.offset(idx(r)) + noise(idx(r));
      }
      for (const auto& t : D.dF) E.emplace_back(col_F(c, t.row()), col_F(v, t.col()), -dt * t.value());
      for (const auto& t : D.dB) E.emplace_back(col_F(c, t.row()), col_B(v, t.col()), -dt * t.value());
      for (const auto& t : D.dA) E.emplace_back(col_F(c, t.row()), col_A(v, t.col()), -dt * t.value());
    }
    // Backward rows at v: B_v - sum_c p_c (B_c + dt*driver(c)) = sum_c p_c dt offset_c.
    for (std::size_t r = 0; r < sz.nB; ++r) {
      E.emplace_back(col_B(v, r), col_B(v, r), 1.0);
      rhs(col_B(v, r)) = 0.0;
    }
    for (std::size_t j = 0; j < L.fanout(); ++j) {
      const std::size_t c = c0 + j;
      const double p = L.child_probability(j);
      LocalJacobian G = probe(sz.nB, sz, true, true, [&](VecCRef F, VecCRef B, VecCRef A, VecRef out, Terms t) {
        system.driver(c, F, B, A, out, t);
      });
      for (std::size_t r = 0; r < sz.nB; ++r) {
        E.emplace_back(col_B(v, r), col_B(c, r), -p);
        rhs(col_B(v, r)) += p * dt * G.offset(idx(r));
      }
      for (const auto& t : G.dF) E.emplace_back(col_B(v, t.row()), col_F(c, t.col()), -p * dt * t.value());
      for (const auto& t : G.dB) E.emplace_back(col_B(v, t.row()), col_B(c, t.col()), -p * dt * t.value());
      for (const auto& t : G.dA) E.emplace_back(col_B(v, t.row()), col_A(c, t.col()), -p * dt * t.value());
    }
  });

  std::size_t total = 0;
  for (const auto& r : rows) total += r.entries.size();
  std::vector<Triplet> all;
  all.reserve(total);
  for (auto& r : rows) {
    all.insert(all.end(), r.entries.begin(), r.entries.end());
    std::vector<Triplet>().swap(r.entries);
  }
  Eigen::SparseMatrix<double> M(idx(nU), idx(nU));
  M.setFromTriplets(all.begin(), all.end());
  all.clear();
  all.shrink_to_fit();
  M.makeCompressed();

  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(M);
  lu.factorize(M);
  if (lu.info() != Eigen::Success)
    throw SolverError("direct solve: singular system (" + lu.lastErrorMessage() +
                      "); the discrete monotonicity structure is violated");
  Vector x = lu.solve(rhs);
  if (lu.info() != Eigen::Success) throw SolverError("direct solve: back substitution failed");
  for (int refine = 0; refine < 2; ++refine) {
    Vector r = rhs - M * x;
    if (max_abs(r) == 0.0) break;
    x += lu.solve(r);
  }

  NodeSolution sol;
  sol.forward = NodeField(Lp, sz.nF);
  sol.backward = NodeField(Lp, sz.nB);
  sol.aggregates = NodeField(Lp, sz.nA);
  for (std::size_t v = 0; v < nodes; ++v) {
    sol.forward.vec(v) = x.segment(idx(v * sz.S), idx(sz.nF));
    sol.backward.vec(v) = x.segment(idx(v * sz.S + sz.nF), idx(sz.nB));
    if (sz.nA) sol.aggregates.vec(v) = x.segment(idx(v * sz.S + sz.nF + sz.nB), idx(sz.nA));
  }
  fill_martingale_parts(system, sol);
  SolveDiagnostics d = residual(system, sol);
  d.method = SolveMethod::direct;
  d.iterations = 1;
  d.tolerance = options.tolerance;
  d.converged = d.max_equation_residual <= options.tolerance;
  sol.diagnostics = d;
  return sol;
}

namespace {

/// Forward sweep given backward fields B; fills F and A.
void forward_sweep(const FbsdeSystem& system, const NodeField& B, NodeField& F, NodeField& A, std::size_t threads) {
  const NoiseLattice& L = *system.lattice();
  const Sizes sz(system);
  const double dt = L.dt();
  Vector init = Vector::Zero(idx(sz.nF));
  system.initial(init);
  F.vec(0) = init;
  for (std::size_t k = 0; k <= L.steps(); ++k) {
    const std::size_t b = L.level_begin(k), m = L.level_size(k);
    parallel_for(m, threads, [&](std::size_t i) {
      const std::size_t v = b + i;
      if (sz.nA) system.aggregates(v, F.vec(v), B.vec(v), A.vec(v), Terms::all);
      if (L.is_leaf(v)) return;
      Vector drift = Vector::Zero(idx(sz.nF)), noise = Vector::Zero(idx(sz.nF));
      system.drift(v, F.vec(v), B.vec(v), A.vec(v), drift, Terms::all);
      const std::size_t c0 = L.first_child(v);
      for (std::size_t j = 0; j < L.fanout(); ++j) {
        noise.setZero();
        system.diffusion(v, L.increment(j), noise);
        F.vec(c0 + j) = F.vec(v) + dt * drift + noise;
      }
    });
  }
}

/// Backward sweep given F; B_old only feeds the aggregates used by terminal maps.
void backward_sweep(const FbsdeSystem& system, const NodeField& F, const NodeField& B_old, NodeField& B,
                    NodeField& A, std::size_t threads) {
  const NoiseLattice& L = *system.lattice();
  const Sizes sz(system);
  const double dt = L.dt();
  const std::size_t K = L.steps();
  {
    const std::size_t b = L.level_begin(K), m = L.level_size(K);
    parallel_for(m, threads, [&](std::size_t i) {
      const std::size_t v = b + i;
      if (sz.nA) system.aggregates(v, F.vec(v), B_old.vec(v), A.vec(v), Terms::all);
      Vector out = Vector::Zero(idx(sz.nB));
      system.terminal(v, F.vec(v), A.vec(v), out, Terms::all);
      B.vec(v) = out;
      if (sz.nA) system.aggregates(v, F.vec(v), B.vec(v), A.vec(v), Terms::all);
    });
  }
  for (std::size_t k = K; k-- > 0;) {
    const std::size_t b = L.level_begin(k), m = L.level_size(k);
    parallel_for(m, threads, [&](std::size_t i) {
      const std::size_t v = b + i;
      Vector acc = Vector::Zero(idx(sz.nB)), drv = Vector::Zero(idx(sz.nB));
      const std::size_t c0 = L.first_child(v);
      for (std::size_t j = 0; j < L.fanout(); ++j) {
        const std::size_t c = c0 + j;
        drv.setZero();
        system.driver(c, F.vec(c), B.vec(c), A.vec(c), drv, Terms::all);
        acc += L.child_probability(j) * (B.vec(c) + dt * drv);
      }
      B.vec(v) = acc;
      if (sz.nA) system.aggregates(v, F.vec(v), B.vec(v), A.vec(v), Terms::all);
    });
  }
}

}  // namespace

NodeSolution solve_picard(const FbsdeSystem& system, const PicardOptions& options) {
  if (!(options.tolerance > 0.0)) throw ValidationError("Picard tolerance must be positive");
  if (options.max_iter < 1) throw ValidationError("Picard needs max_iter >= 1");
  if (!(options.damping > 0.0 && options.damping <= 1.0)) throw ValidationError("Picard damping must lie in (0, 1]");
  const LatticePtr& Lp = system.lattice();
  const Sizes sz(system);
  NodeField F(Lp, sz.nF), F_prev(Lp, sz.nF), B(Lp, sz.nB), B_sweep(Lp, sz.nB), A(Lp, sz.nA);
  const double theta = options.damping;
  double dist = 0.0;
  bool first = true;
  std::size_t it = 0;
  for (it = 1; it <= options.max_iter; ++it) {
    forward_sweep(system, B, F, A, options.threads);
    backward_sweep(system, F, B, B_sweep, A, options.threads);
    dist = 0.0;
    auto& bd = B.data();
    const auto& bs = B_sweep.data();
    for (std::size_t i = 0; i < bd.size(); ++i) {
      double next = theta * bs[i] + (1.0 - theta) * bd[i];
      dist = std::max(dist, std::abs(next - bd[i]));
      bd[i] = next;
    }
    if (!first) dist = std::max(dist, F.max_diff(F_prev));
    first = false;
    F_prev.data() = F.data();
    if (!std::isfinite(dist)) break;
    if (dist <= options.tolerance) break;
  }
  if (it > options.max_iter || !std::isfinite(dist))
    throw SolverError("Picard iteration did not converge after " + std::to_string(options.max_iter) +
                          " iterations (last step " + std::to_string(dist) + ")",
                      dist, options.max_iter);
  forward_sweep(system, B, F, A, options.threads);
  NodeSolution sol;
  sol.forward = std::move(F);
  sol.backward = std::move(B);
  sol.aggregates = std::move(A);
  fill_martingale_parts(system, sol);
  SolveDiagnostics d = residual(system, sol);
  d.method = SolveMethod::picard;
  d.iterations = it;
  d.tolerance = options.tolerance;
  d.converged = true;
  sol.diagnostics = d;
  return sol;
}

void fill_martingale_parts(const FbsdeSystem& system, NodeSolution& sol) {
  const LatticePtr& Lp = system.lattice();
  const NoiseLattice& L = *Lp;
  const Sizes sz(system);
  const double dt = L.dt();
  sol.increments = NodeField(Lp, sz.nB);
  sol.z = NodeField(Lp, sz.nB, L.d0());
  Vector drv = Vector::Zero(idx(sz.nB));
  for (std::size_t v = 0; v < L.size(); ++v) {
    if (L.is_leaf(v)) continue;
    const std::size_t c0 = L.first_child(v);
    auto z = sol.z.mat(v);
    for (std::size_t j = 0; j < L.fanout(); ++j) {
      const std::size_t c = c0 + j;
      drv.setZero();
      system.driver(c, sol.forward.vec(c), sol.backward.vec(c), sol.aggregates.vec(c), drv, Terms::all);
      sol.increments.vec(c) = sol.backward.vec(c) + dt * drv - sol.backward.vec(v);
      if (L.d0() > 0) z += (L.child_probability(j) / dt) * sol.increments.vec(c) * L.increment(j).transpose();
    }
  }
}

SolveDiagnostics residual(const FbsdeSystem& system, const NodeSolution& sol) {
  const NoiseLattice& L = *system.lattice();
  const Sizes sz(system);
  if (sol.forward.width() != sz.nF || sol.backward.width() != sz.nB || sol.aggregates.width() != sz.nA ||
      sol.forward.nodes() != L.size())
    throw ValidationError("solution shape does not match the system");
  const double dt = L.dt();
  double eq = 0.0, term = 0.0;
  Vector init = Vector::Zero(idx(sz.nF));
  system.initial(init);
  eq = std::max(eq, max_abs(sol.forward.vec(0) - init));
  Vector drift = Vector::Zero(idx(sz.nF)), noise = Vector::Zero(idx(sz.nF));
  Vector drv = Vector::Zero(idx(sz.nB)), acc = Vector::Zero(idx(sz.nB)), tv = Vector::Zero(idx(sz.nB));
  Vector agg = Vector::Zero(idx(sz.nA));
  for (std::size_t v = 0; v < L.size(); ++v) {
    if (sz.nA) {
      agg.setZero();
      system.aggregates(v, sol.forward.vec(v), sol.backward.vec(v), agg, Terms::all);
      eq = std::max(eq, max_abs(sol.aggregates.vec(v) - agg));
    }
    if (L.is_leaf(v)) {
      tv.setZero();
      system.terminal(v, sol.forward.vec(v), sol.aggregates.vec(v), tv, Terms::all);
      term = std::max(term, max_abs(sol.backward.vec(v) - tv));
      continue;
    }
    drift.setZero();
    system.drift(v, sol.forward.vec(v), sol.backward.vec(v), sol.aggregates.vec(v), drift, Terms::all);
    acc.setZero();
    const std::size_t c0 = L.first_child(v);
    for (std::size_t j = 0; j < L.fanout(); ++j) {
      const std::size_t c = c0 + j;
      noise.setZero();
      system.diffusion(v, L.increment(j), noise);
      eq = std::max(eq, max_abs(sol.forward.vec(c) - sol.forward.vec(v) - dt * drift - noise));
      drv.setZero();
      system.driver(c, sol.forward.vec(c), sol.backward.vec(c), sol.aggregates.vec(c), drv, Terms::all);
      acc += L.child_probability(j) * (sol.backward.vec(c) + dt * drv);
    }
    eq = std::max(eq, max_abs(sol.backward.vec(v) - acc));
  }
  SolveDiagnostics d;
  d.method = sol.diagnostics.method;
  d.iterations = sol.diagnostics.iterations;
  d.terminal_mismatch = term;
  d.max_equation_residual = std::max(eq, term);
  d.tolerance = sol.diagnostics.tolerance;
  d.converged = d.tolerance > 0.0 ? d.max_equation_residual <= d.tolerance : false;
  return d;
}

}  // namespace eqprice
