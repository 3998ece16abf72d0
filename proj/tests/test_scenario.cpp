#include <doctest.h>

#include <cmath>
#include <numeric>

#include "benchmarks.hpp"
#include "eqprice/errors.hpp"
#include "eqprice/scenario.hpp"

using namespace eqprice;
using bench::S;
using bench::V;

TEST_SUITE("scenario") {
  TEST_CASE("binary lattice with K = 2") {
    auto lat = build_lattice(TimeGrid{1.0, 2}, Dimensions{1, 1, 0, 1}, 2);
    CHECK(lat->size() == 7);
    for (std::size_t v = lat->level_begin(2); v < lat->size(); ++v) CHECK(lat->probability(v) == doctest::Approx(0.25));
  }

  TEST_CASE("one step increments are symmetric with variance dt") {
    auto lat = build_lattice(TimeGrid{0.5, 1}, Dimensions{1, 1, 0, 1}, 2);
    REQUIRE(lat->fanout() == 2);
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      mean += lat->child_probability(j) * lat->increment(j)(0);
      var += lat->child_probability(j) * lat->increment(j)(0) * lat->increment(j)(0);
    }
    CHECK(std::abs(mean) < 1e-15);
    CHECK(var == doctest::Approx(0.5));
    CHECK(std::abs(std::abs(lat->increment(0)(0)) - std::sqrt(0.5)) < 1e-15);
  }

  TEST_CASE("two common Brownian coordinates give four children") {
    auto lat = build_lattice(TimeGrid{1.0, 3}, Dimensions{1, 2, 0, 1}, 2);
    CHECK(lat->fanout() == 4);
    CHECK(lat->size() == 85);
  }

  TEST_CASE("lattice structure invariants") {
    auto lat = build_lattice(TimeGrid{1.0, 4}, Dimensions{1, 1, 0, 1}, 3);
    for (std::size_t k = 0; k <= lat->steps(); ++k) {
      double total = 0.0;
      for (std::size_t v = lat->level_begin(k); v < lat->level_begin(k) + lat->level_size(k); ++v) {
        total += lat->probability(v);
        CHECK(lat->level(v) == k);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
    for (std::size_t v = 1; v < lat->size(); ++v) {
      CHECK(lat->child(lat->parent(v), lat->child_index(v)) == v);
      CHECK(lat->probability(v) ==
            doctest::Approx(lat->probability(lat->parent(v)) * lat->child_probability(lat->child_index(v))));
    }
  }

  TEST_CASE("node budget is checked before allocation") {
    CHECK_THROWS_AS(build_lattice(TimeGrid{1.0, 40}, Dimensions{1, 1, 0, 1}, 2), SizingError);
  }

  TEST_CASE("constant c0 law") {
    ModelSpec s = bench::lq_scalar(2);
    s.c0_law.kind = CommonLawKind::constant;
    s.c0_law.initial = V({2});
    auto lat = bench::lattice(s, 3);
    const auto ex = evaluate_exogenous(lat, s);
    for (std::size_t v = 0; v < lat->size(); ++v) CHECK(ex.c0.vec(v)(0) == 2.0);
  }

  TEST_CASE("drift-only Gaussian walk") {
    ModelSpec s = bench::lq_scalar(2);
    s.c0_law.initial = V({0.25});
    s.c0_law.drift = V({1});
    s.c0_law.vol = S(0);
    auto lat = bench::lattice(s, 2);
    const auto ex = evaluate_exogenous(lat, s);
    for (std::size_t v = lat->level_begin(2); v < lat->size(); ++v) CHECK(ex.c0.vec(v)(0) == doctest::Approx(1.25));
  }

  TEST_CASE("identity Lambda has identity inverse") {
    ModelSpec s = bench::zero_model(2, 2);
    auto lat = bench::lattice(s, 2);
    const auto ex = evaluate_exogenous(lat, s);
    for (std::size_t v = 0; v < lat->size(); ++v) {
      CHECK((Matrix(ex.lambda_inv.mat(v)) - Matrix::Identity(2, 2)).norm() < 1e-15);
      CHECK((Matrix(ex.v0.mat(v)) - Matrix::Identity(2, 2) / 3.0).norm() < 1e-15);
    }
  }

  TEST_CASE("indefinite Lambda is rejected") {
    ModelSpec s = bench::lq_scalar(2);
    s.lambda_minor = bench::C("lambda", S(-1));
    CHECK_THROWS_AS(evaluate_exogenous(bench::lattice(s, 1), s), AssumptionError);
  }

  TEST_CASE("point-mass sampling") {
    std::vector<Atom> law{Atom{1.0, V({1}), V({0})}};
    CHECK(sample_idiosyncratic(law, 3, 1) == std::vector<std::size_t>{0, 0, 0});
  }

  TEST_CASE("sampling is reproducible and stream separated") {
    std::vector<Atom> law{Atom{0.5, V({0}), V({0})}, Atom{0.5, V({1}), V({0})}};
    const auto a = sample_idiosyncratic(law, 50, 99), b = sample_idiosyncratic(law, 50, 99);
    CHECK(a == b);
    CHECK(sample_idiosyncratic(law, 50, 99, 1) != a);
    // Draw i does not depend on how many draws are requested.
    const auto c = sample_idiosyncratic(law, 20, 99);
    CHECK(std::equal(c.begin(), c.end(), a.begin()));
  }

  TEST_CASE("large sample mean for the default seed") {
    std::vector<Atom> law{Atom{0.5, V({0}), V({0})}, Atom{0.5, V({1}), V({0})}};
    const auto a = sample_idiosyncratic(law, 10000, kDefaultSeed);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / 10000.0;
    CHECK(std::abs(mean - 0.5) < 0.02);
    CHECK(std::accumulate(a.begin(), a.end(), std::size_t{0}) == 4935);
  }

  TEST_CASE("node fields reject incompatible comparisons") {
    ModelSpec s = bench::lq_scalar(2);
    NodeField a(bench::lattice(s, 2), 1), b(bench::lattice(s, 3), 1), c(bench::lattice(s, 2), 2);
    CHECK_THROWS_AS(a.max_diff(b), ValidationError);
    CHECK_THROWS_AS(a.max_diff(c), ValidationError);
  }
}
