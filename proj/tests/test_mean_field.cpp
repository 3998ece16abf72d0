#include <doctest.h>

#include "benchmarks.hpp"
#include "eqprice/errors.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/metrics.hpp"

using namespace eqprice;
using bench::S;
using bench::V;

namespace {

double max_abs_field(const NodeField& f) {
  return max_abs(Eigen::Map<const Vector>(f.data().data(), static_cast<Eigen::Index>(f.data().size())));
}

}  // namespace

TEST_SUITE("mean_field") {
  TEST_CASE("reduced system has 6n states per node") {
    for (std::size_t n : {1u, 2u}) {
      const ModelSpec s = bench::lq(n, 2);
      const auto sys = reduce_conditional_means(s, bench::lattice(s, 2));
      CHECK(sys->forward_size() + sys->backward_size() == 6 * n);
      CHECK(sys->aggregate_size() == n);
    }
  }

  TEST_CASE("point mass: deviations vanish and the price matches every finite N") {
    const ModelSpec s = bench::point_mass(bench::lq_scalar(1));
    auto lat = bench::lattice(s, 4);
    const auto mfg = solve_mfg(s, lat);
    for (const auto& d : mfg.dx) CHECK(max_abs_field(d) < 1e-14);
    for (std::size_t N : {1u, 2u, 5u}) {
      const auto sol = solve_full_equilibrium(bench::market(s, lat, N));
      CHECK(sol.price.max_diff(mfg.price_mfg) < 1e-12);
      CHECK(sol.beta_hat.max_diff(mfg.beta_hat) < 1e-12);
      CHECK(sol.X[0].max_diff(mfg.xbar) < 1e-12);
      CHECK(price_gap(sol.price, mfg.price_mfg) <= 1e-16);
    }
  }

  TEST_CASE("terminal mean condition at delta = 0") {
    ModelSpec s = bench::lq_scalar(2);
    s.delta = 0.0;
    auto lat = bench::lattice(s, 3);
    const auto mfg = solve_mfg(s, lat);
    for (std::size_t v = lat->level_begin(3); v < lat->size(); ++v)
      CHECK(mfg.ybar.at(v, 0) == doctest::Approx(0.5 * mfg.xbar.at(v, 0) - 0.1).epsilon(1e-12));
  }

  TEST_CASE("zero model") {
    const ModelSpec s = bench::zero_model(2, 1);
    const auto mfg = solve_mfg(s, bench::lattice(s, 3));
    CHECK(max_abs_field(mfg.price_mfg) == 0.0);
    CHECK(max_abs_field(mfg.beta_hat) == 0.0);
  }

  TEST_CASE("major flow and price from the mean adjoints") {
    ModelSpec s = bench::zero_model(1, 1);
    s.lambda_major = bench::C("lambda0", S(2));
    auto lat = bench::lattice(s, 2);
    MeanSystem sys(MfgData::build(s, lat));
    Vector F = Vector::Zero(3), B = V({0, 2, 2}), A = Vector::Zero(1);
    sys.aggregates(0, F, B, A, Terms::all);
    CHECK(A(0) == doctest::Approx(1.0));
    CHECK(-2.0 + 1.0 * A(0) == doctest::Approx(-1.0));
    const auto mfg = solve_mfg(bench::lq_scalar(2), bench::lattice(bench::lq_scalar(2), 3));
    for (std::size_t v = 0; v < mfg.lattice().size(); ++v)
      CHECK(mfg.price_mfg.at(v, 0) == doctest::Approx(-mfg.ybar.at(v, 0) + mfg.beta_hat.at(v, 0)));
  }

  TEST_CASE("maturity mode pins the terminal price") {
    for (bool walk : {false, true}) {
      const ModelSpec s = bench::maturity_model(walk);
      auto lat = bench::lattice(s, 4);
      const auto mfg = solve_mfg(s, lat);
      const auto ex = evaluate_exogenous(lat, s);
      for (std::size_t v = lat->level_begin(4); v < lat->size(); ++v) {
        CHECK(std::abs(mfg.price_mfg.at(v, 0) - ex.c0.at(v, 0)) <= 1e-12);
        if (!walk) CHECK(mfg.price_mfg.at(v, 0) == doctest::Approx(5.0));
      }
    }
  }

  TEST_CASE("maturity results do not depend on delta") {
    ModelSpec a = bench::maturity_model(true), b = a;
    a.delta = 0.0;
    b.delta = 0.7;
    auto lat = bench::lattice(a, 3);
    CHECK(solve_mfg(a, lat).price_mfg.max_diff(solve_mfg(b, lat).price_mfg) == 0.0);
  }

  TEST_CASE("maturity override") {
    const ModelSpec s = mfg_maturity_override(bench::lq_scalar(2));
    CHECK(s.maturity_mode);
  }

  TEST_CASE("deviation solves are thread-count independent") {
    const ModelSpec s = bench::lq_vector(2);
    auto lat = bench::lattice(s, 3);
    MfgOptions one, four;
    four.threads = 4;
    const auto a = solve_mfg(s, lat, one), b = solve_mfg(s, lat, four);
    for (std::size_t k = 0; k < a.atoms(); ++k) CHECK(a.dx[k].data() == b.dx[k].data());
  }

  TEST_CASE("heterogeneous models are rejected") {
    const ModelSpec he = bench::heterogeneous_copy(bench::lq_scalar(2), {1.0, -1.0}, 0.1);
    CHECK_THROWS_AS(solve_mfg(he, bench::lattice(he, 2)), UnsupportedError);
  }
}
