#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "eqprice/errors.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/metrics.hpp"
#include "eqprice/model_io.hpp"
#include "eqprice/optimality.hpp"
#include "eqprice/report_io.hpp"

namespace py = pybind11;
using namespace eqprice;

namespace {

/// Node values as a (nodes x width) array.
Matrix field_array(const NodeField& f) {
  Matrix m(static_cast<Eigen::Index>(f.nodes()), static_cast<Eigen::Index>(f.width()));
  for (std::size_t v = 0; v < f.nodes(); ++v) m.row(static_cast<Eigen::Index>(v)) = f.vec(v).transpose();
  return m;
}

LatticePtr make_lattice(const ModelSpec& spec, std::size_t K, double T, std::size_t branching) {
  return build_lattice(TimeGrid{T, K}, spec.dims, branching);
}

py::dict lattice_dict(const NoiseLattice& L) {
  std::vector<double> t, p;
  std::vector<long> parent;
  for (std::size_t v = 0; v < L.size(); ++v) {
    t.push_back(L.time(v));
    p.push_back(L.probability(v));
    parent.push_back(v == 0 ? -1 : static_cast<long>(L.parent(v)));
  }
  py::dict d;
  d["t"] = t;
  d["probability"] = p;
  d["parent"] = parent;
  return d;
}

Population population_for(const ModelSpec& spec, std::size_t N, std::uint64_t seed,
                          const std::optional<std::vector<std::size_t>>& atoms) {
  if (atoms) return Population::from_atoms(spec, *atoms);
  if (spec.homogeneous()) return Population::sampled(spec, N, seed);
  return Population::from_atoms(spec, sample_idiosyncratic(spec.atoms, N, seed));
}

}  // namespace

PYBIND11_MODULE(_eqprice, m) {
  m.doc() = "Equilibrium price formation with a major agent and a minor population";
  m.attr("__version__") = kVersion;
  m.attr("DEFAULT_SEED") = kDefaultSeed;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<AssumptionError>(m, "AssumptionError", PyExc_RuntimeError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
  py::register_exception<SizingError>(m, "SizingError", PyExc_RuntimeError);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", PyExc_NotImplementedError);

  py::class_<ModelSpec>(m, "Model")
      .def_property_readonly("n", [](const ModelSpec& s) { return s.dims.n; })
      .def_property_readonly("d0", [](const ModelSpec& s) { return s.dims.d0; })
      .def_property_readonly("N", [](const ModelSpec& s) { return s.dims.N; })
      .def_property_readonly("maturity", [](const ModelSpec& s) { return s.maturity_mode; })
      .def_property_readonly("homogeneous", &ModelSpec::homogeneous)
      .def("to_json", [](const ModelSpec& s) { return model_to_json(s).dump(); });

  m.def("load_model", &load_model, py::arg("path"), "Reads a .json or sectioned text model file.");
  m.def("parse_model", &parse_model_text, py::arg("text"), "Parses sectioned model text.");
  m.def(
      "model_from_json", [](const std::string& text) { return model_from_json(nlohmann::json::parse(text)); },
      py::arg("text"));

  m.def(
      "check_assumptions",
      [](const ModelSpec& spec, double T) {
        return assumption_json(check_assumptions(spec, default_sample_points(spec, T))).dump();
      },
      py::arg("model"), py::arg("T") = 1.0, "Assumption report as JSON text.");

  m.def(
      "solve_n",
      [](const ModelSpec& spec, std::size_t K, double T, std::size_t branching, std::optional<std::size_t> N,
         std::uint64_t seed, std::optional<std::vector<std::size_t>> atoms, bool clearing_only) {
        ModelSpec s = spec;
        if (N) s.dims.N = *N;
        if (atoms) s.dims.N = atoms->size();
        EquilibriumSolution sol;
        {
          py::gil_scoped_release release;
          auto market = MarketData::build(s, make_lattice(s, K, T, branching), population_for(s, s.dims.N, seed, atoms));
          sol = clearing_only ? solve_minor_clearing(market, NodeField(market->lattice, s.dims.n))
                              : solve_full_equilibrium(market);
        }
        py::dict d;
        d["price"] = field_array(sol.price);
        d["beta"] = Matrix(sol.market->population.mass * field_array(sol.beta_hat));
        std::vector<Matrix> X, Y, alpha;
        for (std::size_t i = 0; i < sol.agents(); ++i) {
          X.push_back(field_array(sol.X[i]));
          Y.push_back(field_array(sol.Y[i]));
          alpha.push_back(field_array(sol.alpha_hat[i]));
        }
        d["X"] = X;
        d["Y"] = Y;
        d["alpha"] = alpha;
        d["clearing_residual"] = sol.clearing_residual;
        d["lattice"] = lattice_dict(sol.lattice());
        d["major_cost"] = sol.has_major ? cost_major_from_solution(sol) : std::nan("");
        std::ostringstream csv;
        write_equilibrium_csv(csv, sol);
        d["csv"] = csv.str();
        return d;
      },
      py::arg("model"), py::arg("K") = 8, py::arg("T") = 1.0, py::arg("branching") = 2, py::arg("N") = py::none(),
      py::arg("seed") = kDefaultSeed, py::arg("atoms") = py::none(), py::arg("clearing_only") = false,
      "Finite-N equilibrium: price, major flow beta, per-agent X, Y and alpha per lattice node.");

  m.def(
      "solve_mfg",
      [](const ModelSpec& spec, std::size_t K, double T, std::size_t branching, std::size_t threads) {
        MfgOptions o;
        o.threads = threads;
        MfgSolution sol;
        {
          py::gil_scoped_release release;
          sol = solve_mfg(spec, make_lattice(spec, K, T, branching), o);
        }
        py::dict d;
        d["price"] = field_array(sol.price_mfg);
        d["beta"] = field_array(sol.beta_hat);
        d["xbar"] = field_array(sol.xbar);
        d["ybar"] = field_array(sol.ybar);
        d["lattice"] = lattice_dict(sol.lattice());
        d["summary"] = mfg_summary(sol).dump();
        return d;
      },
      py::arg("model"), py::arg("K") = 8, py::arg("T") = 1.0, py::arg("branching") = 2, py::arg("threads") = 1,
      "Mean-field equilibrium.");

  m.def(
      "convergence_study",
      [](const ModelSpec& spec, std::vector<std::size_t> N_list, std::size_t resamples, std::uint64_t seed,
         std::size_t K, double T, std::size_t threads) {
        StudyOptions o;
        o.grid = TimeGrid{T, K};
        o.threads = threads;
        ConvergenceReport rep;
        {
          py::gil_scoped_release release;
          rep = convergence_study(spec, N_list, resamples, seed, o);
        }
        std::ostringstream csv;
        write_convergence_csv(csv, rep);
        return py::make_tuple(convergence_summary(rep).dump(), csv.str());
      },
      py::arg("model"), py::arg("N_list"), py::arg("resamples") = 64, py::arg("seed") = kDefaultSeed,
      py::arg("K") = 4, py::arg("T") = 1.0, py::arg("threads") = 1, "Returns (summary JSON text, rows CSV text).");

  m.def(
      "perturbation_test",
      [](const ModelSpec& spec, const std::string& level, std::size_t K, double T, std::size_t directions,
         std::uint64_t seed, std::size_t threads) {
        PerturbationLevel lv;
        if (level == "minor") lv = PerturbationLevel::minor;
        else if (level == "major_n") lv = PerturbationLevel::major_n;
        else if (level == "major_mfg") lv = PerturbationLevel::major_mfg;
        else throw ValidationError("level must be minor, major_n or major_mfg");
        PerturbationOptions o;
        o.directions = directions;
        o.seed = seed;
        o.threads = threads;
        PerturbationReport rep;
        {
          py::gil_scoped_release release;
          rep = perturbation_test(spec, make_lattice(spec, K, T, 2), lv,
                                  population_for(spec, spec.dims.N, seed, std::nullopt), o);
        }
        return perturbation_summary(rep).dump();
      },
      py::arg("model"), py::arg("level") = "major_n", py::arg("K") = 4, py::arg("T") = 1.0,
      py::arg("directions") = 20, py::arg("seed") = kDefaultSeed, py::arg("threads") = 1,
      "Perturbation summary as JSON text.");

  m.def(
      "wasserstein2",
      [](const Matrix& a, const Matrix& b, std::optional<std::vector<double>> wa,
         std::optional<std::vector<double>> wb) {
        auto cloud = [](const Matrix& x, const std::optional<std::vector<double>>& w) {
          std::vector<Vector> pts;
          for (Eigen::Index r = 0; r < x.rows(); ++r) pts.push_back(x.row(r).transpose());
          return w ? EmpiricalMeasure::weighted(std::move(pts), *w) : EmpiricalMeasure::uniform(std::move(pts));
        };
        return wasserstein2(cloud(a, wa), cloud(b, wb));
      },
      py::arg("a"), py::arg("b"), py::arg("weights_a") = py::none(), py::arg("weights_b") = py::none(),
      "W2 between point clouds given as (points x dim) arrays.");
  m.def("epsilon_rate", &epsilon_rate, py::arg("N"), py::arg("n"));
}
