#include "eqprice/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "eqprice/errors.hpp"
#include "eqprice/rng.hpp"

namespace eqprice {

NoiseLattice::NoiseLattice(TimeGrid grid, std::size_t d0, std::size_t branching, std::size_t node_budget)
    : grid_(grid), d0_(d0), branching_(branching) {
  if (grid.K < 1) throw ValidationError("time grid needs K >= 1");
  if (!(grid.T > 0.0) || !std::isfinite(grid.T)) throw ValidationError("time grid needs T > 0");
  if (branching != 2 && branching != 3) throw ValidationError("branching must be 2 or 3");

  fanout_ = 1;
  for (std::size_t c = 0; c < d0; ++c) {
    fanout_ *= branching;
    if (fanout_ > node_budget) throw SizingError("lattice fan-out exceeds the node budget");
  }
  level_begin_.assign(grid.K + 2, 0);
  std::size_t width = 1, total = 0;
  for (std::size_t k = 0; k <= grid.K; ++k) {
    level_begin_[k] = total;
    total += width;
    if (total > node_budget) {
      // Report the full requirement without overflowing.
      double need = 0.0;
      for (std::size_t j = 0; j <= grid.K; ++j) need += std::pow(static_cast<double>(fanout_), static_cast<double>(j));
      throw SizingError("lattice needs " + std::to_string(static_cast<long double>(need)) + " nodes, budget is " +
                        std::to_string(node_budget));
    }
    if (k < grid.K) width *= fanout_;
  }
  level_begin_[grid.K + 1] = total;

  const double dt = grid.dt();
  std::vector<double> pts, pw;
  if (branching == 2) {
    pts = {std::sqrt(dt), -std::sqrt(dt)};
    pw = {0.5, 0.5};
  } else {
    pts = {-std::sqrt(3.0 * dt), 0.0, std::sqrt(3.0 * dt)};
    pw = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
  }
  child_prob_.assign(fanout_, 1.0);
  increments_.assign(fanout_, Vector::Zero(static_cast<Eigen::Index>(d0)));
  for (std::size_t j = 0; j < fanout_; ++j) {
    std::size_t rest = j;
    for (std::size_t c = 0; c < d0; ++c) {
      std::size_t digit = rest % branching;
      rest /= branching;
      increments_[j](static_cast<Eigen::Index>(c)) = pts[digit];
      child_prob_[j] *= pw[digit];
    }
  }
  zero_increment_ = Vector::Zero(static_cast<Eigen::Index>(d0));

  probability_.assign(total, 0.0);
  probability_[0] = 1.0;
  for (std::size_t k = 0; k < grid.K; ++k)
    for (std::size_t v = level_begin_[k]; v < level_begin_[k + 1]; ++v) {
      std::size_t c0 = first_child(v);
      for (std::size_t j = 0; j < fanout_; ++j) probability_[c0 + j] = probability_[v] * child_prob_[j];
    }
}

std::size_t NoiseLattice::level(std::size_t v) const {
  auto it = std::upper_bound(level_begin_.begin(), level_begin_.end() - 1, v);
  return static_cast<std::size_t>(it - level_begin_.begin()) - 1;
}

std::size_t NoiseLattice::parent(std::size_t v) const {
  std::size_t k = level(v);
  if (k == 0) throw ValidationError("the root has no parent");
  std::size_t local = v - level_begin_[k];
  return level_begin_[k - 1] + local / fanout_;
}

std::size_t NoiseLattice::first_child(std::size_t v) const {
  std::size_t k = level(v);
  if (k >= grid_.K) throw ValidationError("leaf nodes have no children");
  std::size_t local = v - level_begin_[k];
  return level_begin_[k + 1] + local * fanout_;
}

std::size_t NoiseLattice::child_index(std::size_t v) const {
  std::size_t k = level(v);
  if (k == 0) return 0;
  return (v - level_begin_[k]) % fanout_;
}

const Vector& NoiseLattice::increment_into(std::size_t v) const {
  if (v == 0) return zero_increment_;
  return increments_[child_index(v)];
}

bool NoiseLattice::same_structure(const NoiseLattice& other) const {
  return grid_.K == other.grid_.K && grid_.T == other.grid_.T && d0_ == other.d0_ && branching_ == other.branching_;
}

LatticePtr build_lattice(const TimeGrid& grid, const Dimensions& dims, std::size_t branching,
                         std::size_t node_budget) {
  return std::make_shared<const NoiseLattice>(grid, dims.d0, branching, node_budget);
}

NodeField::NodeField(LatticePtr lattice, std::size_t rows, std::size_t cols, double fill)
    : lattice_(std::move(lattice)), rows_(rows), cols_(cols) {
  if (!lattice_) throw ValidationError("node field needs a lattice");
  data_.assign(lattice_->size() * rows * cols, fill);
}

double NodeField::max_diff(const NodeField& other) const {
  if (empty() || other.empty()) throw ValidationError("max_diff on an empty node field");
  if (!lattice_->same_structure(*other.lattice_) || width() != other.width())
    throw ValidationError("node fields live on incompatible lattices or have different shapes");
  double m = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
  return m;
}

ExogenousFields evaluate_exogenous(const LatticePtr& lattice, const ModelSpec& spec) {
  validate(spec);
  const auto& L = *lattice;
  if (L.d0() != spec.dims.d0) throw ValidationError("lattice d0 differs from the model's d0");
  const std::size_t n = spec.dims.n;
  const auto ni = static_cast<Eigen::Index>(n);
  ExogenousFields ex;
  ex.lattice = lattice;
  ex.c0 = NodeField(lattice, n);
  ex.lambda = NodeField(lattice, n, n);
  ex.lambda_inv = NodeField(lattice, n, n);
  ex.lambda0 = NodeField(lattice, n, n);
  ex.v0 = NodeField(lattice, n, n);

  const auto& law = spec.c0_law;
  Vector drift = law.drift.size() ? law.drift : Vector::Zero(ni);
  Matrix vol = law.vol.size() ? law.vol : Matrix::Zero(ni, static_cast<Eigen::Index>(L.d0()));
  ex.c0.vec(0) = law.initial;
  if (law.kind == CommonLawKind::gaussian_walk) {
    for (std::size_t v = 1; v < L.size(); ++v) {
      std::size_t p = L.parent(v);
      ex.c0.vec(v) = ex.c0.vec(p) + drift * L.dt() + vol * L.increment_into(v);
    }
  } else {
    for (std::size_t v = 1; v < L.size(); ++v) ex.c0.vec(v) = law.initial;
  }

  for (std::size_t v = 0; v < L.size(); ++v) {
    double t = L.time(v);
    Vector c0 = ex.c0.vec(v);
    Matrix lam = spec.lambda_minor.evaluate(t, c0);
    Matrix lam0 = spec.lambda_major.evaluate(t, c0);
    double asym = max_abs(lam - lam.transpose());
    Eigen::LLT<Matrix> llt(0.5 * (lam + lam.transpose()));
    if (asym > 1e-12 * (1.0 + max_abs(lam)) || llt.info() != Eigen::Success || sym_min_eig(lam) <= 0.0)
      throw AssumptionError("Lambda is not symmetric positive definite at node " + std::to_string(v) +
                            " (t=" + std::to_string(t) + ")");
    Matrix m = lam0 + 2.0 * lam;
    if (sym_min_eig(m) <= 0.0)
      throw AssumptionError("Lambda0 + 2 Lambda is not positive definite at node " + std::to_string(v) +
                            " (t=" + std::to_string(t) + ")");
    ex.lambda.mat(v) = lam;
    ex.lambda0.mat(v) = lam0;
    ex.lambda_inv.mat(v) = lam.inverse();
    ex.v0.mat(v) = m.inverse();
  }
  ex.ci.reserve(spec.atoms.size());
  for (const auto& a : spec.atoms) ex.ci.push_back(a.ci);
  return ex;
}

std::vector<std::size_t> sample_idiosyncratic(const std::vector<Atom>& atoms, std::size_t N, std::uint64_t seed,
                                              std::uint64_t stream) {
  if (atoms.empty()) throw ValidationError("cannot sample from an empty law");
  std::vector<double> cdf(atoms.size());
  double acc = 0.0;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    if (!(atoms[a].weight > 0.0)) throw ValidationError("atom weights must be positive");
    acc += atoms[a].weight;
    cdf[a] = acc;
  }
  std::vector<std::size_t> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    double u = StreamRng::derive(seed, stream, i).uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out[i] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), atoms.size() - 1);
  }
  return out;
}

}  // namespace eqprice
