#include <doctest.h>

#include <cmath>
#include <random>

#include "benchmarks.hpp"
#include "eqprice/errors.hpp"
#include "eqprice/metrics.hpp"

using namespace eqprice;
using bench::V;

namespace {

/// Brute force over all permutations.
double w2_brute(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  std::vector<std::size_t> perm(a.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - b[perm[i]]).squaredNorm();
    best = std::min(best, c / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best);
}

std::vector<Vector> cloud(std::mt19937_64& g, std::size_t m, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<Vector> pts(m, Vector(static_cast<Eigen::Index>(dim)));
  for (auto& p : pts)
    for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = nd(g);
  return pts;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("W2 examples") {
    CHECK(wasserstein2(EmpiricalMeasure::scalar({0, 2}), EmpiricalMeasure::scalar({1, 1})) == doctest::Approx(1.0));
    CHECK(wasserstein2(EmpiricalMeasure::scalar({3, -1, 2}), EmpiricalMeasure::scalar({2, 3, -1})) == 0.0);
    const auto a = EmpiricalMeasure::uniform({V({0, 0}), V({1, 1})});
    const auto b = EmpiricalMeasure::uniform({V({1, 0}), V({0, 1})});
    CHECK(wasserstein2(a, b) == doctest::Approx(1.0));
  }

  TEST_CASE("weighted quantile coupling") {
    // A quarter of the mass moves from 0 to 1.
    const auto a = EmpiricalMeasure::weighted({V({0}), V({1})}, {0.75, 0.25});
    const auto b = EmpiricalMeasure::scalar({0, 1});
    CHECK(wasserstein2(a, b) == doctest::Approx(std::sqrt(0.25)));
    CHECK(wasserstein1(a, b) == doctest::Approx(0.25));
    CHECK_THROWS_AS(EmpiricalMeasure::weighted({V({0}), V({1})}, {0.5, 0.4}), ValidationError);
  }

  TEST_CASE("assignment matches brute force") {
    std::mt19937_64 g(11);
    for (int rep = 0; rep < 20; ++rep) {
      const auto a = cloud(g, 6, 2), b = cloud(g, 6, 2);
      CHECK(wasserstein2_assignment(EmpiricalMeasure::uniform(a), EmpiricalMeasure::uniform(b)) ==
            doctest::Approx(w2_brute(a, b)).epsilon(1e-12));
    }
  }

  TEST_CASE("one-dimensional sort path agrees with the assignment path") {
    std::mt19937_64 g(5);
    for (int rep = 0; rep < 20; ++rep) {
      const auto a = EmpiricalMeasure::uniform(cloud(g, 40, 1)), b = EmpiricalMeasure::uniform(cloud(g, 40, 1));
      CHECK(std::abs(wasserstein2(a, b) - wasserstein2_assignment(a, b)) <= 1e-12);
    }
  }

  TEST_CASE("weighted clouds in several dimensions are unsupported") {
    const auto a = EmpiricalMeasure::weighted({V({0, 0}), V({1, 1})}, {0.3, 0.7});
    CHECK_THROWS_AS(wasserstein2(a, a), UnsupportedError);
  }

  TEST_CASE("epsilon rate") {
    CHECK(epsilon_rate(16, 1) == doctest::Approx(0.25));
    CHECK(epsilon_rate(100, 1) == doctest::Approx(0.1));
    CHECK(epsilon_rate(10000, 6) == doctest::Approx(0.046416).epsilon(1e-5));
    CHECK(epsilon_rate(4, 1) == doctest::Approx(0.5 * (1.0 + std::log(4.0))));
  }

  TEST_CASE("price gap") {
    const ModelSpec s = bench::lq_scalar(2);
    auto lat = bench::lattice(s, 4, 2.0);
    NodeField a(lat, 1, 1, 0.3), b(lat, 1, 1, 1.3);
    CHECK(price_gap(a, a) == 0.0);
    CHECK(price_gap(a, b) == doctest::Approx(2.0));
    CHECK_THROWS_AS(price_gap(a, NodeField(bench::lattice(s, 3, 2.0), 1)), ValidationError);
  }

  TEST_CASE("log-log fit") {
    std::vector<std::size_t> N{8, 16, 32, 64};
    std::vector<double> y;
    for (auto n : N) y.push_back(3.0 / std::sqrt(static_cast<double>(n)));
    const auto f = fit_loglog(N, y);
    CHECK_FALSE(f.degenerate);
    CHECK(f.slope == doctest::Approx(-0.5));
    CHECK(fit_loglog({8, 16}, {1.0, 0.5}).degenerate);
    CHECK(fit_loglog(N, {0, 0, 0, 0}).degenerate);
  }

  TEST_CASE("point-mass convergence study is degenerate") {
    const ModelSpec s = bench::point_mass(bench::lq_scalar(1));
    StudyOptions o;
    o.grid = TimeGrid{1.0, 2};
    const auto rep = convergence_study(s, {2, 4, 8}, 3, 1, o);
    CHECK(rep.degenerate);
    CHECK(rep.gap_fit.degenerate);
    for (const auto& r : rep.rows) CHECK(r.price_gap <= 1e-16);
  }

  TEST_CASE("doubling resamples shrinks standard errors by about 1/sqrt 2") {
    const ModelSpec s = bench::lq_scalar(1);
    StudyOptions o;
    o.grid = TimeGrid{1.0, 2};
    const auto a = convergence_study(s, {8}, 200, 3, o);
    const auto b = convergence_study(s, {8}, 400, 3, o);
    const double ratio = b.per_N[0].gap_se / a.per_N[0].gap_se;
    CHECK(ratio > 0.55);
    CHECK(ratio < 0.9);
  }

  TEST_CASE("convergence rows are independent of the thread count") {
    const ModelSpec s = bench::lq_scalar(1);
    StudyOptions o1, o4;
    o1.grid = o4.grid = TimeGrid{1.0, 2};
    o4.threads = 4;
    const auto a = convergence_study(s, {4, 8}, 5, 9, o1), b = convergence_study(s, {4, 8}, 5, 9, o4);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
      CHECK(a.rows[k].price_gap == b.rows[k].price_gap);
      CHECK(a.rows[k].rhs() == b.rows[k].rhs());
    }
  }

  TEST_CASE("zero heterogeneity") {
    const ModelSpec homo = bench::lq_scalar(3);
    const ModelSpec he = bench::heterogeneous_copy(homo, {0, 0, 0}, 0.0);
    auto lat = bench::lattice(homo, 3);
    const auto rep = stability_gap(he, homo, lat, {0, 1, 0});
    CHECK(rep.d_fx == 0.0);
    CHECK(rep.d_l == 0.0);
    CHECK(rep.d_terminal_x == 0.0);
    CHECK(rep.lhs_hetero == rep.lhs_homo);
    CHECK(rep.hetero.price.max_diff(rep.homo.price) <= 1e-12);
  }

  TEST_CASE("constant drift shift integrates to T") {
    const ModelSpec homo = bench::lq_scalar(2);
    const ModelSpec he = bench::heterogeneous_copy(homo, {1.0, 1.0}, 1.0);
    auto lat = bench::lattice(homo, 4, 1.5);
    const auto rep = stability_gap(he, homo, lat, {0, 1});
    CHECK(rep.d_l == doctest::Approx(1.5));
  }
}
