#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eqprice/errors.hpp"
#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/metrics.hpp"
#include "eqprice/model.hpp"
#include "eqprice/model_io.hpp"
#include "eqprice/optimality.hpp"
#include "eqprice/parallel.hpp"
#include "eqprice/report_io.hpp"
#include "eqprice/scenario.hpp"

namespace fs = std::filesystem;
using namespace eqprice;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kAssumption = 2, kSolver = 3, kGate = 4 };

constexpr double kSlopeGate = -0.35;
constexpr double kDeltaJGate = -1e-9;

/// Command-line values; unset optionals fall back to the config file, then to defaults.
struct Args {
  std::string config;
  std::string model;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, K, branching, N, resamples, directions;
  std::optional<double> T;
  std::vector<std::size_t> N_list;
  std::string level = "all";
  bool force = false;
  bool maturity = false;
  bool clearing_only = false;
};

/// Resolved experiment settings.
struct Experiment {
  std::string command;
  fs::path model_path;
  std::string config_bytes;
  ModelSpec spec;
  TimeGrid grid{1.0, 8};
  std::size_t branching = 2;
  std::size_t N = 0;
  std::uint64_t seed = kDefaultSeed;
  std::size_t threads = 1;
  std::size_t resamples = 64;
  std::size_t directions = 20;
  std::vector<std::size_t> N_list{8, 16, 32, 64};
  fs::path out;
  bool force = false;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class T>
std::optional<T> config_value(const json& cfg, const char* section, const char* key) {
  if (!cfg.contains(section) || !cfg[section].contains(key)) return std::nullopt;
  try {
    return cfg[section][key].get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("config [") + section + "] " + key + " has the wrong type");
  }
}

void check_config_keys(const json& cfg) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> allowed{
      {"experiment", {"model"}},
      {"grid", {"K", "T", "branching"}},
      {"run", {"N", "seed", "resamples", "N_list", "threads", "directions", "force", "maturity"}},
      {"output", {"directory"}}};
  for (const auto& sec : cfg.items()) {
    auto it = std::find_if(allowed.begin(), allowed.end(), [&](const auto& a) { return a.first == sec.key(); });
    if (it == allowed.end()) throw UsageError("unknown config section [" + sec.key() + "]");
    for (const auto& kv : sec.value().items())
      if (std::find(it->second.begin(), it->second.end(), kv.key()) == it->second.end())
        throw UsageError("unknown config key '" + kv.key() + "' in [" + sec.key() + "]");
  }
}

Experiment resolve(const std::string& command, const Args& a) {
  Experiment e;
  e.command = command;
  json cfg = json::object();
  fs::path cfg_dir = ".";
  if (!a.config.empty()) {
    const std::string text = read_file(a.config);
    try {
      cfg = parse_sections(text, false);
    } catch (const ValidationError& err) {
      throw UsageError(std::string("config: ") + err.what());
    }
    check_config_keys(cfg);
    cfg_dir = fs::path(a.config).parent_path();
    e.config_bytes += text;
  }
  std::string model = a.model;
  if (model.empty()) {
    if (auto m = config_value<std::string>(cfg, "experiment", "model")) model = (cfg_dir / *m).string();
  }
  if (model.empty()) throw UsageError("no model given (use --model or [experiment] model in --config)");
  e.model_path = model;
  if (!fs::exists(e.model_path)) throw UsageError("model file '" + model + "' does not exist");
  const std::string model_text = read_file(e.model_path);
  e.config_bytes += model_text;
  e.spec = load_model(e.model_path.string());
  if (a.maturity || config_value<bool>(cfg, "run", "maturity").value_or(false)) e.spec.maturity_mode = true;

  auto pick = [](auto cli, auto conf, auto def) { return cli ? *cli : (conf ? *conf : def); };
  e.grid.K = pick(a.K, config_value<std::size_t>(cfg, "grid", "K"), e.grid.K);
  e.grid.T = pick(a.T, config_value<double>(cfg, "grid", "T"), e.grid.T);
  e.branching = pick(a.branching, config_value<std::size_t>(cfg, "grid", "branching"), e.branching);
  e.N = pick(a.N, config_value<std::size_t>(cfg, "run", "N"), e.spec.dims.N);
  e.seed = pick(a.seed, config_value<std::uint64_t>(cfg, "run", "seed"), kDefaultSeed);
  e.threads = pick(a.threads, config_value<std::size_t>(cfg, "run", "threads"), default_threads());
  e.resamples = pick(a.resamples, config_value<std::size_t>(cfg, "run", "resamples"), e.resamples);
  e.directions = pick(a.directions, config_value<std::size_t>(cfg, "run", "directions"), e.directions);
  if (!a.N_list.empty()) {
    e.N_list = a.N_list;
  } else if (cfg.contains("run") && cfg["run"].contains("N_list")) {
    const json& l = cfg["run"]["N_list"];
    e.N_list.clear();
    if (l.is_number())
      e.N_list.push_back(l.get<std::size_t>());
    else
      for (const auto& x : l) e.N_list.push_back(x.get<std::size_t>());
  }
  e.force = a.force || config_value<bool>(cfg, "run", "force").value_or(false);
  if (e.grid.K == 0 || !(e.grid.T > 0.0)) throw UsageError("grid needs K >= 1 and T > 0");
  if (e.branching < 2) throw UsageError("branching must be at least 2");
  if (e.N == 0) throw UsageError("N must be positive");
  if (e.threads == 0) e.threads = 1;
  if (!e.spec.homogeneous() && e.N != e.spec.agents.size())
    throw UsageError("the model lists " + std::to_string(e.spec.agents.size()) + " agents but N = " +
                     std::to_string(e.N));
  e.spec.dims.N = e.N;

  if (!a.out.empty())
    e.out = a.out;
  else if (auto d = config_value<std::string>(cfg, "output", "directory"))
    e.out = cfg_dir / *d;
  else if (const char* env = std::getenv("EQPRICE_OUT_DIR"); env && *env)
    e.out = env;
  else
    e.out = "eqprice_out";

  std::ostringstream settings;
  settings << "K=" << e.grid.K << " T=" << format_double(e.grid.T) << " b=" << e.branching << " N=" << e.N
           << " R=" << e.resamples << " D=" << e.directions << " maturity=" << e.spec.maturity_mode;
  e.config_bytes += settings.str();
  return e;
}

void write_manifest(const Experiment& e) {
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - e.start).count();
  write_file(e.out, "manifest.json", manifest(e.command, e.config_bytes, e.seed, e.threads, wall).dump(2) + "\n");
}

std::string vector_text(Eigen::Map<const Vector> v) {
  std::string s;
  for (Eigen::Index k = 0; k < v.size(); ++k) s += (k ? " " : "") + format_double(v(k));
  return s;
}

LatticePtr lattice_of(const Experiment& e) { return build_lattice(e.grid, e.spec.dims, e.branching); }

Population population_of(const Experiment& e) {
  if (e.spec.homogeneous()) return Population::sampled(e.spec, e.N, e.seed);
  return Population::from_atoms(e.spec, sample_idiosyncratic(e.spec.atoms, e.N, e.seed));
}

/// Runs the assumption checks; writes assumptions.json and returns false on failure.
bool checks_pass(const Experiment& e) {
  const AssumptionReport rep = check_assumptions(e.spec, default_sample_points(e.spec, e.grid.T));
  write_file(e.out, "assumptions.json", assumption_json(rep).dump(2) + "\n");
  if (!rep.all_passed())
    for (const auto& f : rep.failures) std::cerr << "assumption failed: " << f << "\n";
  return rep.all_passed();
}

int cmd_check(const Experiment& e) {
  const bool ok = checks_pass(e);
  write_manifest(e);
  std::cout << (ok ? "all assumption checks passed" : "assumption checks failed") << "\n";
  return ok ? kOk : kAssumption;
}

int cmd_solve_n(const Experiment& e, bool clearing_only) {
  if (!e.force && !checks_pass(e)) {
    write_manifest(e);
    return kAssumption;
  }
  SolverChoice choice;
  choice.direct.threads = e.threads;
  choice.picard.threads = e.threads;
  auto market = MarketData::build(e.spec, lattice_of(e), population_of(e));
  const EquilibriumSolution sol = clearing_only
                                      ? solve_minor_clearing(market, NodeField(market->lattice, e.spec.dims.n), choice)
                                      : solve_full_equilibrium(market, choice, false);
  std::ostringstream csv;
  write_equilibrium_csv(csv, sol);
  write_file(e.out, "equilibrium.csv", csv.str());
  write_file(e.out, "equilibrium.json", equilibrium_summary(sol).dump(2) + "\n");
  write_manifest(e);
  std::cout << "price_t0: " << vector_text(sol.price.vec(0)) << "\n";
  std::cout << "clearing_residual: " << format_double(sol.clearing_residual) << "\n";
  return kOk;
}

int cmd_solve_mfg(const Experiment& e) {
  if (!e.force && !checks_pass(e)) {
    write_manifest(e);
    return kAssumption;
  }
  MfgOptions mo;
  mo.threads = e.threads;
  mo.check = false;
  const MfgSolution sol = solve_mfg(e.spec, lattice_of(e), mo);
  std::ostringstream csv;
  write_mfg_csv(csv, sol);
  write_file(e.out, "mfg.csv", csv.str());
  write_file(e.out, "mfg.json", mfg_summary(sol).dump(2) + "\n");
  write_manifest(e);
  std::cout << "price_t0: " << vector_text(sol.price_mfg.vec(0)) << "\n";
  std::cout << "mean_residual: " << format_double(sol.mean.diagnostics.max_equation_residual) << "\n";
  return kOk;
}

int cmd_converge(const Experiment& e) {
  if (!e.force && !checks_pass(e)) {
    write_manifest(e);
    return kAssumption;
  }
  StudyOptions so;
  so.grid = e.grid;
  so.branching = e.branching;
  so.threads = e.threads;
  so.check = false;
  const ConvergenceReport rep = convergence_study(e.spec, e.N_list, e.resamples, e.seed, so);
  std::ostringstream csv;
  write_convergence_csv(csv, rep);
  write_file(e.out, "convergence.csv", csv.str());
  json summary = convergence_summary(rep);
  const bool pass = rep.degenerate || (!rep.gap_fit.degenerate && rep.gap_fit.slope <= kSlopeGate);
  summary["slope"] = rep.degenerate || rep.gap_fit.degenerate ? json() : json(rep.gap_fit.slope);
  summary["slope_gate"] = kSlopeGate;
  summary["gate_passed"] = pass;
  write_file(e.out, "convergence_summary.json", summary.dump(2) + "\n");
  write_manifest(e);
  if (rep.degenerate)
    std::cout << "degenerate study: every price gap is zero\n";
  else if (rep.gap_fit.degenerate)
    std::cout << "slope: unavailable, fewer than 3 population sizes besides N = 4\n";
  else
    std::cout << "slope: " << format_double(rep.gap_fit.slope) << "\n";
  return pass ? kOk : kGate;
}

int cmd_verify(const Experiment& e, const std::string& level_arg) {
  if (!e.force && !checks_pass(e)) {
    write_manifest(e);
    return kAssumption;
  }
  std::vector<PerturbationLevel> levels;
  if (level_arg == "all" || level_arg == "minor") levels.push_back(PerturbationLevel::minor);
  if (level_arg == "all" || level_arg == "major_n") levels.push_back(PerturbationLevel::major_n);
  if ((level_arg == "all" && e.spec.homogeneous()) || level_arg == "major_mfg")
    levels.push_back(PerturbationLevel::major_mfg);
  if (levels.empty()) throw UsageError("--level must be minor, major_n, major_mfg or all");

  const LatticePtr lattice = lattice_of(e);
  const Population pop = population_of(e);
  PerturbationOptions po;
  po.directions = e.directions;
  po.seed = e.seed;
  po.threads = e.threads;
  po.check = false;
  json summary;
  summary["levels"] = json::array();
  double min_dj = 0.0;
  std::size_t failed = 0;
  for (PerturbationLevel level : levels) {
    const PerturbationReport rep = perturbation_test(e.spec, lattice, level, pop, po);
    std::ostringstream csv;
    write_perturbation_csv(csv, rep);
    write_file(e.out, std::string("perturbation_") + level_name(level) + ".csv", csv.str());
    summary["levels"].push_back(perturbation_summary(rep));
    min_dj = std::min(min_dj, rep.min_delta_J);
    failed += rep.failed_directions;
    std::cout << level_name(level) << ": min_delta_J " << format_double(rep.min_delta_J) << ", max |a1| "
              << format_double(rep.gradient_norm) << "\n";
  }
  const bool pass = min_dj >= kDeltaJGate && failed == 0;
  summary["min_delta_J"] = min_dj;
  summary["delta_J_gate"] = kDeltaJGate;
  summary["failed_directions"] = failed;
  summary["gate_passed"] = pass;
  write_file(e.out, "verify_summary.json", summary.dump(2) + "\n");
  write_manifest(e);
  return pass ? kOk : kGate;
}

int cmd_lattice_dump(const Experiment& e) {
  const LatticePtr lattice = lattice_of(e);
  const ExogenousFields exo = evaluate_exogenous(lattice, e.spec);
  std::ostringstream csv;
  write_lattice_csv(csv, *lattice, &exo.c0);
  write_file(e.out, "lattice.csv", csv.str());
  write_manifest(e);
  std::cout << "nodes: " << lattice->size() << "\n";
  return kOk;
}

void write_failure(const fs::path& out, const std::string& kind, const std::exception& err) {
  json j{{"error", kind}, {"message", err.what()}};
  if (auto* se = dynamic_cast<const SolverError*>(&err)) {
    j["last_residual"] = se->last_residual();
    j["iterations"] = se->iterations();
  }
  try {
    write_file(out, "diagnostics.json", j.dump(2) + "\n");
  } catch (const std::exception&) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium price formation with a major agent and a minor population"};
  app.require_subcommand(1);
  Args a;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "Experiment config file");
    sub->add_option("--model", a.model, "Model file (.json or sectioned text)");
    sub->add_option("--out", a.out, "Output directory (default: $EQPRICE_OUT_DIR or ./eqprice_out)");
    sub->add_option("--seed", a.seed, "Random seed");
    sub->add_option("--threads", a.threads, "Worker threads (default: available parallelism)");
    sub->add_option("--K", a.K, "Time steps");
    sub->add_option("--T", a.T, "Horizon");
    sub->add_option("--branching", a.branching, "Children per common-noise coordinate");
    sub->add_option("--N", a.N, "Number of minor agents");
    sub->add_flag("--force", a.force, "Run even if assumption checks fail");
    sub->add_flag("--maturity", a.maturity, "Securities pay c0_T at maturity");
  };
  auto* check = app.add_subcommand("check", "Assumption checks");
  auto* solve_n = app.add_subcommand("solve-n", "Finite-N equilibrium");
  auto* solve_mfg_cmd = app.add_subcommand("solve-mfg", "Mean-field equilibrium");
  auto* converge = app.add_subcommand("converge", "Finite-N to mean-field convergence study");
  auto* verify = app.add_subcommand("verify", "Perturbation optimality tests");
  auto* dump = app.add_subcommand("lattice-dump", "Write the common-noise lattice");
  for (auto* sub : {check, solve_n, solve_mfg_cmd, converge, verify, dump}) add_common(sub);
  solve_n->add_flag("--clearing-only", a.clearing_only, "Clear the market against a zero major flow");
  converge->add_option("--resamples", a.resamples, "Atom draws per N");
  converge->add_option("--N-list", a.N_list, "Population sizes")->delimiter(',');
  verify->add_option("--directions", a.directions, "Random directions per level");
  verify->add_option("--level", a.level, "minor, major_n, major_mfg or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  fs::path out = a.out.empty() ? fs::path("eqprice_out") : fs::path(a.out);
  try {
    const Experiment e = resolve(name, a);
    out = e.out;
    if (name == "check") return cmd_check(e);
    if (name == "solve-n") return cmd_solve_n(e, a.clearing_only);
    if (name == "solve-mfg") return cmd_solve_mfg(e);
    if (name == "converge") return cmd_converge(e);
    if (name == "verify") return cmd_verify(e, a.level);
    return cmd_lattice_dump(e);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kUsage;
  } catch (const ValidationError& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kUsage;
  } catch (const AssumptionError& err) {
    std::cerr << "assumption failure: " << err.what() << "\n";
    write_failure(out, "assumption", err);
    return kAssumption;
  } catch (const SolverError& err) {
    std::cerr << "solver failure: " << err.what() << "\n";
    write_failure(out, "solver", err);
    return kSolver;
  } catch (const SizingError& err) {
    std::cerr << "budget exceeded: " << err.what() << "\n";
    write_failure(out, "sizing", err);
    return kSolver;
  } catch (const UnsupportedError& err) {
    std::cerr << "unsupported: " << err.what() << "\n";
    write_failure(out, "unsupported", err);
    return kSolver;
  }
}
