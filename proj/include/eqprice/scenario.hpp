#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "eqprice/linalg.hpp"
#include "eqprice/model.hpp"

namespace eqprice {

struct TimeGrid {
  double T = 1.0;
  std::size_t K = 1;

  double dt() const { return T / static_cast<double>(K); }
  double t(std::size_t k) const { return T * static_cast<double>(k) / static_cast<double>(K); }
};

inline constexpr std::size_t kDefaultNodeBudget = std::size_t{1} << 20;

/// Non-recombining tree of common-noise histories. Nodes are numbered level by
/// level; the children of a node are contiguous, so node values only ever
/// depend on the node's own history.
class NoiseLattice {
 public:
  NoiseLattice(TimeGrid grid, std::size_t d0, std::size_t branching, std::size_t node_budget = kDefaultNodeBudget);

  const TimeGrid& grid() const { return grid_; }
  double dt() const { return grid_.dt(); }
  std::size_t steps() const { return grid_.K; }
  std::size_t d0() const { return d0_; }
  std::size_t branching() const { return branching_; }
  /// branching^d0; one child per node when d0 = 0.
  std::size_t fanout() const { return fanout_; }
  std::size_t size() const { return probability_.size(); }

  std::size_t level_begin(std::size_t k) const { return level_begin_[k]; }
  std::size_t level_size(std::size_t k) const { return level_begin_[k + 1] - level_begin_[k]; }
  std::size_t level(std::size_t v) const;
  double time(std::size_t v) const { return grid_.t(level(v)); }
  bool is_leaf(std::size_t v) const { return v >= level_begin_[grid_.K]; }
  std::size_t parent(std::size_t v) const;
  std::size_t first_child(std::size_t v) const;
  std::size_t child(std::size_t v, std::size_t j) const { return first_child(v) + j; }
  /// Position of v among its siblings.
  std::size_t child_index(std::size_t v) const;

  /// Unconditional path probability of node v.
  double probability(std::size_t v) const { return probability_[v]; }
  /// Conditional probability of the j-th child.
  double child_probability(std::size_t j) const { return child_prob_[j]; }
  /// Common-noise increment leading into the j-th child.
  const Vector& increment(std::size_t j) const { return increments_[j]; }
  /// Increment leading into node v (zero vector at the root).
  const Vector& increment_into(std::size_t v) const;

  bool same_structure(const NoiseLattice& other) const;

 private:
  TimeGrid grid_;
  std::size_t d0_;
  std::size_t branching_;
  std::size_t fanout_;
  std::vector<std::size_t> level_begin_;
  std::vector<double> probability_;
  std::vector<double> child_prob_;
  std::vector<Vector> increments_;
  Vector zero_increment_;
};

using LatticePtr = std::shared_ptr<const NoiseLattice>;

/// Node budget is checked before any allocation; exceeding it throws SizingError.
LatticePtr build_lattice(const TimeGrid& grid, const Dimensions& dims, std::size_t branching = 2,
                         std::size_t node_budget = kDefaultNodeBudget);

/// Value of shape rows x cols attached to every node of a lattice (row-major per node).
class NodeField {
 public:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  NodeField() = default;
  NodeField(LatticePtr lattice, std::size_t rows, std::size_t cols = 1, double fill = 0.0);

  const NoiseLattice& lattice() const { return *lattice_; }
  const LatticePtr& lattice_ptr() const { return lattice_; }
  bool empty() const { return !lattice_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t width() const { return rows_ * cols_; }
  std::size_t nodes() const { return lattice_ ? lattice_->size() : 0; }

  Eigen::Map<Vector> vec(std::size_t v) { return {data_.data() + v * width(), static_cast<Eigen::Index>(width())}; }
  Eigen::Map<const Vector> vec(std::size_t v) const {
    return {data_.data() + v * width(), static_cast<Eigen::Index>(width())};
  }
  Eigen::Map<RowMajor> mat(std::size_t v) {
    return {data_.data() + v * width(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<const RowMajor> mat(std::size_t v) const {
    return {data_.data() + v * width(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  double& at(std::size_t v, std::size_t c) { return data_[v * width() + c]; }
  double at(std::size_t v, std::size_t c) const { return data_[v * width() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  /// Max-abs difference; throws ValidationError on incompatible shape or lattice.
  double max_diff(const NodeField& other) const;

 private:
  LatticePtr lattice_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Exogenous inputs materialized on the lattice.
struct ExogenousFields {
  LatticePtr lattice;
  NodeField c0;          ///< n
  NodeField lambda;      ///< n x n
  NodeField lambda_inv;  ///< n x n
  NodeField lambda0;     ///< n x n
  NodeField v0;          ///< (Lambda0 + 2 Lambda)^{-1}, n x n
  std::vector<Vector> ci;  ///< per atom, constant in time

  Vector c0_at(std::size_t v) const { return c0.vec(v); }
};

/// Throws AssumptionError if Lambda is not symmetric positive definite, or
/// Lambda0 + 2 Lambda is not positive definite, at some node.
ExogenousFields evaluate_exogenous(const LatticePtr& lattice, const ModelSpec& spec);

/// N i.i.d. atom indices; draw i uses the stream derived from (seed, stream, i).
std::vector<std::size_t> sample_idiosyncratic(const std::vector<Atom>& atoms, std::size_t N, std::uint64_t seed,
                                              std::uint64_t stream = 0);

inline constexpr std::uint64_t kDefaultSeed = 20240229;

}  // namespace eqprice
