#include <doctest.h>

#include <cmath>

#include "benchmarks.hpp"
#include "eqprice/errors.hpp"
#include "eqprice/fbsde.hpp"
#include "eqprice/finite_market.hpp"

using namespace eqprice;
using bench::V;

namespace {

double max_field_diff(const NodeSolution& a, const NodeSolution& b) {
  return std::max({a.forward.max_diff(b.forward), a.backward.max_diff(b.backward),
                   a.aggregates.empty() ? 0.0 : a.aggregates.max_diff(b.aggregates)});
}

}  // namespace

TEST_SUITE("fbsde") {
  TEST_CASE("backward step with equal children is a martingale") {
    const auto r = backward_step({V({1.5}), V({1.5})}, {0.5, 0.5}, V({0}), 0.1);
    CHECK(r.value(0) == 1.5);
    for (const auto& inc : r.increments) CHECK(inc(0) == 0.0);
  }

  TEST_CASE("backward step two-point mean") {
    const auto r = backward_step({V({2}), V({0})}, {0.5, 0.5}, V({0}), 0.1);
    CHECK(r.value(0) == doctest::Approx(1.0));
    CHECK(r.increments[0](0) == doctest::Approx(1.0));
    CHECK(r.increments[1](0) == doctest::Approx(-1.0));
  }

  TEST_CASE("backward step with driver") {
    const auto r = backward_step({V({2}), V({0})}, {0.5, 0.5}, V({3}), 0.1);
    CHECK(r.value(0) == doctest::Approx(1.3));
  }

  TEST_CASE("backward step rejects a defective law") {
    CHECK_THROWS_AS(backward_step({V({2}), V({0})}, {0.5, 0.4}, V({0}), 0.1), ValidationError);
  }

  TEST_CASE("lattice backward step uses the child law") {
    auto lat = build_lattice(TimeGrid{1.0, 1}, Dimensions{1, 1, 0, 1}, 2);
    const auto r = backward_step(*lat, 0, {V({2}), V({0})}, V({3}));
    CHECK(r.value(0) == doctest::Approx(1.0 + 3.0));
  }

  TEST_CASE("zero model solves to zero") {
    auto m = bench::market(bench::zero_model(1, 2), bench::lattice(bench::zero_model(1, 2), 3), 2);
    EquilibriumSystem sys(m);
    const auto d = solve_direct(sys);
    CHECK(max_abs(Eigen::Map<const Vector>(d.forward.data().data(), d.forward.data().size())) == 0.0);
    CHECK(max_abs(Eigen::Map<const Vector>(d.backward.data().data(), d.backward.data().size())) == 0.0);
    const auto p = solve_picard(sys);
    CHECK(p.diagnostics.iterations == 1);
    CHECK(p.diagnostics.max_equation_residual == 0.0);
    CHECK(residual(sys, p).max_equation_residual == 0.0);
  }

  TEST_CASE("noiseless minor instance matches Y_t = 2 - t") {
    const ModelSpec s = bench::noiseless_model();
    for (std::size_t K : {64u, 128u}) {
      auto lat = bench::lattice(s, K);
      auto m = MarketData::build(s, lat, Population::from_atoms(s, {0}));
      MinorClearingSystem sys(m, NodeField(lat, 1));
      const auto sol = solve_direct(sys);
      CHECK(std::abs(sol.backward.at(0, 0) - 2.0) <= 2e-2);
      // The child-node driver makes this instance exact, so there is no first-order error to halve.
      for (std::size_t v = 0; v < lat->size(); ++v) CHECK(sol.backward.at(v, 0) == doctest::Approx(2.0 - lat->time(v)));
    }
  }

  TEST_CASE("Picard agrees with the direct solve") {
    for (std::size_t n : {1u, 2u}) {
      const ModelSpec s = bench::lq(n, 3);
      auto m = bench::market(s, bench::lattice(s, 4), 3);
      EquilibriumSystem sys(m);
      const auto d = solve_direct(sys);
      const auto p = solve_picard(sys, PicardOptions{0.5, 1e-13, 2000, 1});
      CHECK(max_field_diff(d, p) <= 1e-8);
      CHECK(d.diagnostics.max_equation_residual <= 1e-10);
    }
  }

  TEST_CASE("damping does not move the fixed point") {
    const ModelSpec s = bench::lq_scalar(2);
    auto m = bench::market(s, bench::lattice(s, 3, 0.5), 2);
    EquilibriumSystem sys(m);
    const auto a = solve_picard(sys, PicardOptions{1.0, 1e-13, 2000, 1});
    const auto b = solve_picard(sys, PicardOptions{0.5, 1e-13, 2000, 1});
    CHECK(max_field_diff(a, b) <= 1e-9);
  }

  TEST_CASE("Picard reports non-convergence") {
    const ModelSpec s = bench::lq_scalar(2);
    auto m = bench::market(s, bench::lattice(s, 3), 2);
    EquilibriumSystem sys(m);
    CHECK_THROWS_AS(solve_picard(sys, PicardOptions{0.5, 1e-14, 2, 1}), SolverError);
  }

  TEST_CASE("residual detects a tampered node") {
    const ModelSpec s = bench::zero_model(1, 2);
    auto m = bench::market(s, bench::lattice(s, 3), 2);
    EquilibriumSystem sys(m);
    auto sol = solve_direct(sys);
    CHECK(residual(sys, sol).max_equation_residual == 0.0);
    sol.backward.at(1, 1) += 1.0;
    CHECK(residual(sys, sol).max_equation_residual >= 0.5);
    auto sol2 = solve_direct(sys);
    sol2.forward.at(5, 0) += 1.0;
    CHECK(residual(sys, sol2).max_equation_residual >= 0.5);
  }

  TEST_CASE("direct solve residual on benchmarks") {
    for (std::size_t n : {1u, 2u})
      for (std::size_t N : {1u, 4u}) {
        const ModelSpec s = bench::lq(n, N);
        auto m = bench::market(s, bench::lattice(s, 4), N);
        EquilibriumSystem sys(m);
        CHECK(solve_direct(sys).diagnostics.max_equation_residual <= 1e-10);
      }
  }

  TEST_CASE("unknown budget is enforced") {
    const ModelSpec s = bench::lq_scalar(2);
    auto m = bench::market(s, bench::lattice(s, 4), 2);
    EquilibriumSystem sys(m);
    DirectOptions o;
    o.unknown_budget = 10;
    CHECK_THROWS_AS(solve_direct(sys, o), SizingError);
  }

  TEST_CASE("martingale parts") {
    const ModelSpec s = bench::lq_scalar(2);
    auto lat = bench::lattice(s, 3);
    auto m = bench::market(s, lat, 2);
    EquilibriumSystem sys(m);
    const auto sol = solve_direct(sys);
    // Increments have zero conditional mean under the child law.
    for (std::size_t v = 0; v < lat->size(); ++v) {
      if (lat->is_leaf(v)) continue;
      Vector acc = Vector::Zero(static_cast<Eigen::Index>(sol.increments.width()));
      for (std::size_t j = 0; j < lat->fanout(); ++j)
        acc += lat->child_probability(j) * sol.increments.vec(lat->child(v, j));
      CHECK(acc.cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}
