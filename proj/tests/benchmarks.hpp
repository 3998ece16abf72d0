#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "eqprice/errors.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/model.hpp"
#include "eqprice/scenario.hpp"

namespace bench {

using eqprice::Atom;
using eqprice::Coefficient;
using eqprice::Dimensions;
using eqprice::Matrix;
using eqprice::ModelSpec;
using eqprice::Vector;

inline Matrix S(double s) { return Matrix::Constant(1, 1, s); }

inline Vector V(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

inline Matrix M(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double x : row) m(r, c++) = x;
    ++r;
  }
  return m;
}

inline Coefficient C(const char* name, Matrix m) { return Coefficient(name, std::move(m)); }

/// Strictly convex quadratic costs, every forcing term zero: the equilibrium is identically zero.
inline ModelSpec zero_model(std::size_t n = 1, std::size_t N = 2, std::size_t d0 = 1) {
  ModelSpec s = ModelSpec::zero(Dimensions{n, d0, 0, N});
  const Matrix I = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  s.minor.cf = C("cf", I);
  s.minor.cg = C("cg", I);
  s.major.dfdx.c = C("cf0", I);
  s.major.dgdx.c = C("cg0", I);
  s.delta = 0.2;
  return s;
}

/// One agent, no common noise: with zero major flow Y_t = 2 - t and phi_t = -(2 - t) on [0, 1].
inline ModelSpec noiseless_model() {
  ModelSpec s = ModelSpec::zero(Dimensions{1, 0, 0, 1});
  s.minor.cf = C("cf", S(1));
  s.minor.cg = C("cg", S(1));
  s.major.dfdx.c = C("cf0", S(1));
  s.major.dgdx.c = C("cg0", S(1));
  s.atoms = {Atom{1.0, V({1}), V({0})}};
  return s;
}

/// Scalar linear-quadratic benchmark with a Gaussian-walk common factor and two xi atoms.
inline ModelSpec lq_scalar(std::size_t N = 2) {
  ModelSpec s = ModelSpec::zero(Dimensions{1, 1, 0, N});
  s.delta = 0.2;
  s.lambda_minor = C("lambda", S(1));
  s.lambda_major = C("lambda0", S(2));
  s.minor.l = C("l", S(0.1));
  s.minor.sigma0 = C("sigma0", S(0.3));
  s.minor.cf = C("cf", S(1));
  s.minor.hf = C("hf", S(0.05));
  s.minor.hf.set_c0_terms({S(0.1)});
  s.minor.cg = C("cg", S(0.5));
  s.minor.hg = C("hg", S(-0.1));
  s.major.l0 = C("l0", S(0.05));
  s.major.s0 = C("s0", S(0.2));
  s.major.dfdx.c = C("cf0", S(1));
  s.major.dfdx.h = C("hf0", S(0.1));
  s.major.dgdx.c = C("cg0", S(0.5));
  s.major.chi0 = V({0.5});
  s.c0_law.kind = eqprice::CommonLawKind::gaussian_walk;
  s.c0_law.initial = V({1});
  s.c0_law.vol = S(0.2);
  s.atoms = {Atom{0.5, V({-1}), V({0})}, Atom{0.5, V({1}), V({0})}};
  return s;
}

/// Two securities, non-diagonal Lambda and c^f.
inline ModelSpec lq_vector(std::size_t N = 2) {
  ModelSpec s = ModelSpec::zero(Dimensions{2, 1, 0, N});
  s.delta = 0.2;
  s.lambda_minor = C("lambda", M({{1, 0.2}, {0.2, 1.5}}));
  s.lambda_major = C("lambda0", M({{2, 0}, {0, 2}}));
  s.minor.l = C("l", V({0.1, -0.05}));
  s.minor.sigma0 = C("sigma0", V({0.3, 0.1}));
  s.minor.cf = C("cf", M({{1, 0.1}, {0.1, 0.8}}));
  s.minor.hf = C("hf", V({0.05, 0}));
  s.minor.cg = C("cg", M({{0.5, 0}, {0, 0.5}}));
  s.minor.hg = C("hg", V({-0.1, 0.05}));
  s.major.l0 = C("l0", V({0.05, 0}));
  s.major.s0 = C("s0", V({0.2, 0.1}));
  s.major.dfdx.c = C("cf0", M({{1, 0}, {0, 1.2}}));
  s.major.dfdx.h = C("hf0", V({0.1, 0}));
  s.major.dgdx.c = C("cg0", M({{0.5, 0}, {0, 0.5}}));
  s.major.chi0 = V({0.5, -0.2});
  s.c0_law.kind = eqprice::CommonLawKind::gaussian_walk;
  s.c0_law.initial = V({1, 0.5});
  s.c0_law.vol = V({0.2, 0.1});
  s.atoms = {Atom{0.5, V({-1, 0.5}), V({0, 0})}, Atom{0.5, V({1, -0.5}), V({0, 0})}};
  return s;
}

inline ModelSpec lq(std::size_t n, std::size_t N) { return n == 1 ? lq_scalar(N) : lq_vector(N); }

/// Same model with every agent starting at xi = 0.5.
inline ModelSpec point_mass(ModelSpec s) {
  const auto n = static_cast<Eigen::Index>(s.dims.n);
  s.atoms = {Atom{1.0, Vector::Constant(n, 0.5), Vector::Zero(n)}};
  return s;
}

/// Maturity payoff c0_T; constant c0 = 5 or a Gaussian walk.
inline ModelSpec maturity_model(bool walk, std::size_t N = 2) {
  ModelSpec s = lq_scalar(N);
  s.maturity_mode = true;
  s.minor.cg = Coefficient("cg", 1, 1);
  s.minor.hg = Coefficient("hg", 1, 1);
  s.major.dgdx.c = Coefficient("cg0", 1, 1);
  if (walk) {
    s.c0_law.initial = V({1});
    s.c0_law.vol = S(0.3);
  } else {
    s.c0_law.kind = eqprice::CommonLawKind::constant;
    s.c0_law.initial = V({5});
    s.c0_law.vol = S(0);
  }
  return s;
}

/// Agents i = 0..N-1 as an explicit heterogeneous spec with l_i = l + eps * shift[i].
inline ModelSpec heterogeneous_copy(const ModelSpec& homo, const std::vector<double>& shift, double eps) {
  ModelSpec s = homo;
  s.agents.assign(shift.size(), homo.minor);
  for (std::size_t i = 0; i < shift.size(); ++i)
    s.agents[i].l.set_base(homo.minor.l.base().array() + eps * shift[i]);
  s.dims.N = shift.size();
  return s;
}

inline eqprice::LatticePtr lattice(const ModelSpec& s, std::size_t K, double T = 1.0, std::size_t branching = 2) {
  return eqprice::build_lattice(eqprice::TimeGrid{T, K}, s.dims, branching);
}

/// Agents holding atoms 0, 1, 0, 1, ...
inline std::vector<std::size_t> alternating_atoms(const ModelSpec& s, std::size_t N) {
  std::vector<std::size_t> a(N);
  for (std::size_t i = 0; i < N; ++i) a[i] = i % s.atoms.size();
  return a;
}

inline eqprice::MarketPtr market(const ModelSpec& s, const eqprice::LatticePtr& lat, std::size_t N) {
  ModelSpec spec = s;
  spec.dims.N = N;
  return eqprice::MarketData::build(spec, lat, eqprice::Population::from_atoms(spec, alternating_atoms(spec, N)));
}

}  // namespace bench
