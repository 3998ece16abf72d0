#include <doctest.h>

#include <cmath>
#include <random>

#include "benchmarks.hpp"
#include "eqprice/errors.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/optimality.hpp"

using namespace eqprice;
using bench::S;
using bench::V;

namespace {

PerturbationOptions small_options(std::size_t directions = 4) {
  PerturbationOptions o;
  o.directions = directions;
  return o;
}

}  // namespace

TEST_SUITE("optimality") {
  TEST_CASE("zero model costs nothing at the zero equilibrium") {
    const ModelSpec s = bench::zero_model();
    auto lat = bench::lattice(s, 3);
    auto mk = bench::market(s, lat, 2);
    const auto sol = solve_full_equilibrium(mk);
    CHECK(std::abs(cost_major_from_solution(sol)) <= 1e-14);
    for (std::size_t i = 0; i < sol.agents(); ++i)
      CHECK(std::abs(cost_minor(mk, i, sol.price, sol.alpha_hat[i])) <= 1e-14);
  }

  TEST_CASE("unit trading rate against a zero price costs T/2") {
    const ModelSpec s = ModelSpec::zero(Dimensions{1, 1, 0, 1});
    auto lat = bench::lattice(s, 4, 1.0);
    auto mk = bench::market(s, lat, 1);
    NodeField phi(lat, 1), alpha(lat, 1, 1, 1.0);
    CHECK(cost_minor(mk, 0, phi, alpha) == doctest::Approx(0.5));
  }

  TEST_CASE("best response beats nearby controls") {
    const ModelSpec s = bench::lq_scalar(2);
    auto lat = bench::lattice(s, 3);
    auto mk = bench::market(s, lat, 2);
    const auto sol = solve_full_equilibrium(mk);
    for (std::size_t i = 0; i < 2; ++i) {
      const double J = cost_minor(mk, i, sol.price, sol.alpha_hat[i]);
      for (std::size_t d = 0; d < 5; ++d) {
        const NodeField eta = random_direction(lat, 1, 3, d);
        for (double e : {-0.1, 0.1}) {
          NodeField a = sol.alpha_hat[i];
          for (std::size_t k = 0; k < a.data().size(); ++k) a.data()[k] += e * eta.data()[k];
          CHECK(cost_minor(mk, i, sol.price, a) >= J - 1e-12);
        }
      }
    }
  }

  TEST_CASE("noiseless agent: the best response minimizes its own cost") {
    const ModelSpec s = bench::noiseless_model();
    auto lat = bench::lattice(s, 16);
    auto mk = bench::market(s, lat, 1);
    const auto sol = solve_minor_clearing(mk, NodeField(lat, 1));
    const auto br = minor_best_response(mk, sol.price);
    const double J = cost_minor(mk, 0, sol.price, br[0].alpha);
    NodeField a = br[0].alpha;
    for (auto& x : a.data()) x += 0.05;
    CHECK(cost_minor(mk, 0, sol.price, a) > J);
  }

  TEST_CASE("major cost is consistent across evaluation paths") {
    const ModelSpec s = bench::lq_scalar(3);
    auto lat = bench::lattice(s, 3);
    auto mk = bench::market(s, lat, 3);
    const auto sol = solve_full_equilibrium(mk);
    CHECK(cost_major(mk, sol.beta_hat) == doctest::Approx(cost_major_from_solution(sol)).epsilon(1e-8));
  }

  TEST_CASE("finite-N perturbation: optimum is a minimum") {
    for (std::size_t n : {1u, 2u}) {
      const ModelSpec s = bench::lq(n, 2);
      auto lat = bench::lattice(s, 3);
      const auto pop = Population::from_atoms(s, bench::alternating_atoms(s, 2));
      const auto rep = perturbation_test(s, lat, PerturbationLevel::major_n, pop, small_options());
      CHECK(rep.failed_directions == 0);
      CHECK(rep.min_delta_J >= -1e-9);
      CHECK(rep.gradient_norm <= 1e-7);
      CHECK(rep.min_curvature > 0.0);
      for (std::size_t d = 0; d < rep.directions; ++d) {
        CHECK(rep.delta_J[d][0] == 0.0);
        // dJ(eps) = dJ(-eps) up to rounding: the first variation vanishes.
        for (std::size_t e = 1; e <= 3; ++e)
          CHECK(rep.delta_J[d][e] == doctest::Approx(rep.delta_J[d][7 - e]).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("minor and mean-field perturbation levels") {
    const ModelSpec s = bench::lq_scalar(2);
    auto lat = bench::lattice(s, 3);
    const auto pop = Population::from_atoms(s, bench::alternating_atoms(s, 2));
    for (auto level : {PerturbationLevel::minor, PerturbationLevel::major_mfg}) {
      const auto rep = perturbation_test(s, lat, level, pop, small_options());
      CHECK(rep.min_delta_J >= -1e-9);
      CHECK(rep.failed_directions == 0);
    }
  }

  TEST_CASE("quadratic fit recovers coefficients") {
    const std::vector<double> eps{0.0, -0.2, -0.1, 0.1, 0.2};
    std::vector<double> dJ;
    for (double e : eps) dJ.push_back(0.5 + 2.0 * e + 3.0 * e * e);
    const auto f = fit_quadratic(eps, dJ);
    CHECK(f.a0 == doctest::Approx(0.5));
    CHECK(f.a1 == doctest::Approx(2.0));
    CHECK(f.a2 == doctest::Approx(3.0));
    CHECK_THROWS_AS(fit_quadratic({0.0, 1.0}, {0.0, 1.0}), ValidationError);
  }

  TEST_CASE("random directions are unit norm and vanish at terminal nodes") {
    const ModelSpec s = bench::lq_vector(2);
    auto lat = bench::lattice(s, 3);
    const NodeField eta = random_direction(lat, 2, 7, 1);
    double norm2 = 0.0;
    for (std::size_t v = 0; v < lat->size(); ++v) {
      if (lat->is_leaf(v)) CHECK(eta.vec(v).norm() == 0.0);
      else norm2 += lat->probability(v) * lat->dt() * eta.vec(v).squaredNorm();
    }
    CHECK(norm2 == doctest::Approx(1.0));
  }

  TEST_CASE("minor Hamiltonian is convex in the control with the stated minimizer") {
    const ModelSpec s = bench::lq_scalar(2);
    const PointContext at{0.3, V({1.0})};
    const Vector x = V({0.2}), y = V({1.0}), phi = V({1.0}), ci = V({0.0});
    const Vector a = minor_minimizer(s.lambda_minor.base(), y, phi);
    CHECK(a(0) == doctest::Approx(-2.0));
    double best = std::numeric_limits<double>::infinity(), arg = 0.0;
    for (int k = -400; k <= 400; ++k) {
      const double u = k * 0.01;
      const double h = hamiltonian_minor(s, 0, at, ci, x, y, V({u}), phi);
      if (h < best) best = h, arg = u;
    }
    CHECK(arg == doctest::Approx(-2.0));
    std::mt19937_64 g(1);
    std::normal_distribution<double> nd;
    for (int k = 0; k < 100; ++k) {
      const Vector u = V({nd(g)}), w = V({nd(g)});
      const double mid = hamiltonian_minor(s, 0, at, ci, x, y, 0.5 * (u + w), phi);
      CHECK(mid <= 0.5 * (hamiltonian_minor(s, 0, at, ci, x, y, u, phi) +
                          hamiltonian_minor(s, 0, at, ci, x, y, w, phi)) + 1e-12);
    }
    CHECK_THROWS_AS(minor_minimizer(Matrix::Zero(1, 1), y, phi), AssumptionError);
  }

  TEST_CASE("zero model Hamiltonians vanish at zero arguments") {
    const ModelSpec s = ModelSpec::zero(Dimensions{1, 1, 0, 2});
    const PointContext at{0.0, V({0})};
    const Vector z = V({0});
    SystemArgs a{z, z, {z, z}, {z, z}, {z, z}, {z, z}, {z, z}};
    CHECK(hamiltonian_n(s, at, a, z) == 0.0);
    MfgArgs m{z, z, z, z, z, z, z, z, z};
    CHECK(hamiltonian_mfg(s, at, m, z) == 0.0);
    CHECK(hamiltonian_minor(s, 0, at, z, z, z, z, z) == 0.0);
  }

  TEST_CASE("major minimizers") {
    const Matrix one = S(1);
    const Vector b = beta_minimizer_n(one, one, V({-1}), {V({1}), V({1})}, {V({1}), V({1})});
    CHECK(b(0) == doctest::Approx(2.0));
    CHECK(beta_minimizer_mfg(one, one, V({-1}), V({1}), V({1}))(0) == doctest::Approx(1.0));

    const ModelSpec s = bench::lq_vector(3);
    const PointContext at{0.5, V({1.0, 0.5})};
    std::mt19937_64 g(2);
    std::normal_distribution<double> nd;
    auto rv = [&] { return V({nd(g), nd(g)}); };
    SystemArgs a{rv(), rv(), {rv(), rv(), rv()}, {rv(), rv(), rv()}, {rv(), rv(), rv()}, {rv(), rv(), rv()},
                 {V({0, 0}), V({0, 0}), V({0, 0})}};
    const Vector bn = beta_minimizer_n(s.lambda_major.base(), s.lambda_minor.base(), a.p0, a.y, a.p);
    const double Hn = hamiltonian_n(s, at, a, bn);
    MfgArgs m{rv(), rv(), rv(), rv(), rv(), rv(), rv(), rv(), V({0, 0})};
    const Vector bm = beta_minimizer_mfg(s.lambda_major.base(), s.lambda_minor.base(), m.p0, m.ybar, m.pbar);
    const double Hm = hamiltonian_mfg(s, at, m, bm);
    for (int k = 0; k < 100; ++k) {
      const Vector d = rv();
      CHECK(hamiltonian_n(s, at, a, bn + 0.1 * d) >= Hn - 1e-12);
      CHECK(hamiltonian_mfg(s, at, m, bm + 0.1 * d) >= Hm - 1e-12);
    }
  }
}
