#include "eqprice/report_io.hpp"

#include <charconv>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "eqprice/errors.hpp"

namespace eqprice {

using nlohmann::json;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) s[static_cast<std::size_t>(i)] = digits[x & 0xf];
  return s;
}

namespace {

constexpr const char* kHeader = "node_id,t,entity,field_name,component_index,value\n";

void field_rows(std::ostream& os, const NodeField& f, const std::string& entity, const char* name, bool skip_leaves,
                double scale = 1.0) {
  if (f.empty()) return;
  const NoiseLattice& lat = f.lattice();
  for (std::size_t v = 0; v < f.nodes(); ++v) {
    if (skip_leaves && lat.is_leaf(v)) continue;
    const std::string prefix = std::to_string(v) + "," + format_double(lat.time(v)) + "," + entity + "," + name + ",";
    for (std::size_t c = 0; c < f.width(); ++c)
      os << prefix << c << "," << format_double(scale * f.at(v, c)) << "\n";
  }
}

json vec_json(Eigen::Map<const Vector> v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

json fit_json(const SlopeFit& f) {
  return {{"slope", f.slope},   {"intercept", f.intercept}, {"slope_se", f.slope_se},
          {"points", f.points}, {"degenerate", f.degenerate}, {"excluded", f.excluded}};
}

const char* status_name(ClauseStatus s) {
  switch (s) {
    case ClauseStatus::passed: return "passed";
    case ClauseStatus::failed: return "failed";
    case ClauseStatus::inconclusive: return "inconclusive";
  }
  return "unknown";
}

}  // namespace

void write_equilibrium_csv(std::ostream& os, const EquilibriumSolution& sol) {
  os << kHeader;
  if (sol.has_major) {
    field_rows(os, sol.x0, "MAJOR", "x0", false);
    field_rows(os, sol.p0, "MAJOR", "p0", false);
  }
  field_rows(os, sol.beta_hat, "MAJOR", "beta", true, sol.market->population.mass);
  field_rows(os, sol.price, "PRICE", "phi", false);
  for (std::size_t i = 0; i < sol.agents(); ++i) {
    const std::string id = std::to_string(i);
    field_rows(os, sol.X[i], id, "X", false);
    field_rows(os, sol.Y[i], id, "Y", false);
    if (i < sol.alpha_hat.size()) field_rows(os, sol.alpha_hat[i], id, "alpha", true);
    if (i < sol.R.size()) field_rows(os, sol.R[i], id, "R", false);
    if (i < sol.P.size()) field_rows(os, sol.P[i], id, "P", false);
  }
}

void write_mfg_csv(std::ostream& os, const MfgSolution& sol) {
  os << kHeader;
  field_rows(os, sol.x0, "MAJOR", "x0", false);
  field_rows(os, sol.p0, "MAJOR", "p0", false);
  field_rows(os, sol.beta_hat, "MAJOR", "beta", true);
  field_rows(os, sol.price_mfg, "PRICE", "phi", false);
  field_rows(os, sol.xbar, "MEAN", "xbar", false);
  field_rows(os, sol.ybar, "MEAN", "ybar", false);
  field_rows(os, sol.rbar, "MEAN", "rbar", false);
  field_rows(os, sol.pbar, "MEAN", "pbar", false);
  for (std::size_t a = 0; a < sol.atoms(); ++a) {
    const std::string id = std::to_string(a);
    field_rows(os, sol.atom_x(a), id, "x", false);
    field_rows(os, sol.atom_y(a), id, "y", false);
  }
}

void write_lattice_csv(std::ostream& os, const NoiseLattice& lattice, const NodeField* c0) {
  os << "node_id,level,t,parent,probability";
  const std::size_t w = c0 ? c0->width() : 0;
  for (std::size_t c = 0; c < w; ++c) os << ",c0_" << c;
  os << "\n";
  for (std::size_t v = 0; v < lattice.size(); ++v) {
    os << v << "," << lattice.level(v) << "," << format_double(lattice.time(v)) << ",";
    if (v == 0)
      os << "-1";
    else
      os << lattice.parent(v);
    os << "," << format_double(lattice.probability(v));
    for (std::size_t c = 0; c < w; ++c) os << "," << format_double(c0->at(v, c));
    os << "\n";
  }
}

void write_convergence_csv(std::ostream& os, const ConvergenceReport& report) {
  os << "N,resample,price_gap,w2_g,w2_rT,int_w2_y,int_w2_p,epsilon_N\n";
  for (const auto& r : report.rows)
    os << r.N << "," << r.resample << "," << format_double(r.price_gap) << "," << format_double(r.w2_g) << ","
       << format_double(r.w2_rT) << "," << format_double(r.int_w2_y) << "," << format_double(r.int_w2_p) << ","
       << format_double(r.epsilon_N) << "\n";
}

void write_perturbation_csv(std::ostream& os, const PerturbationReport& report) {
  os << "direction_id,eps,delta_J\n";
  for (std::size_t d = 0; d < report.delta_J.size(); ++d)
    for (std::size_t e = 0; e < report.eps_grid.size(); ++e)
      os << d << "," << format_double(report.eps_grid[e]) << "," << format_double(report.delta_J[d][e]) << "\n";
}

json diagnostics_json(const SolveDiagnostics& d) {
  return {{"method", d.method == SolveMethod::direct ? "direct" : "picard"},
          {"iterations", d.iterations},
          {"max_equation_residual", d.max_equation_residual},
          {"terminal_mismatch", d.terminal_mismatch},
          {"tolerance", d.tolerance},
          {"converged", d.converged}};
}

json equilibrium_summary(const EquilibriumSolution& sol) {
  const NoiseLattice& lat = sol.lattice();
  json j;
  j["agents"] = sol.agents();
  j["nodes"] = lat.size();
  j["K"] = lat.steps();
  j["T"] = lat.grid().T;
  j["full_equilibrium"] = sol.has_major;
  j["price_t0"] = vec_json(sol.price.vec(0));
  j["beta_t0"] = json::array();
  const Vector b0 = sol.beta(0);
  for (Eigen::Index k = 0; k < b0.size(); ++k) j["beta_t0"].push_back(b0(k));
  j["clearing_residual"] = sol.clearing_residual;
  j["diagnostics"] = diagnostics_json(sol.solution.diagnostics);
  return j;
}

json mfg_summary(const MfgSolution& sol) {
  json j;
  j["atoms"] = sol.atoms();
  j["weights"] = sol.weights;
  j["nodes"] = sol.lattice().size();
  j["price_t0"] = vec_json(sol.price_mfg.vec(0));
  j["beta_t0"] = vec_json(sol.beta_hat.vec(0));
  j["mean_diagnostics"] = diagnostics_json(sol.mean.diagnostics);
  double dev = 0.0;
  for (const auto& d : sol.deviation_diagnostics) dev = std::max(dev, d.max_equation_residual);
  j["max_deviation_residual"] = dev;
  return j;
}

json convergence_summary(const ConvergenceReport& report) {
  json j;
  j["seed"] = report.seed;
  j["resamples"] = report.resamples;
  j["degenerate"] = report.degenerate;
  j["gap_fit"] = fit_json(report.gap_fit);
  j["rhs_fit"] = fit_json(report.rhs_fit);
  j["fitted_C"] = report.fitted_C ? json(*report.fitted_C) : json();
  j["ratio_slope"] = report.ratio_slope ? json(*report.ratio_slope) : json();
  json per = json::array();
  for (const auto& s : report.per_N)
    per.push_back({{"N", s.N},
                   {"mean_gap", s.mean_gap},
                   {"gap_se", s.gap_se},
                   {"mean_rhs", s.mean_rhs},
                   {"rhs_se", s.rhs_se},
                   {"epsilon_N", s.epsilon_N}});
  j["per_N"] = per;
  return j;
}

json perturbation_summary(const PerturbationReport& report) {
  json j;
  j["level"] = level_name(report.level);
  j["directions"] = report.directions;
  j["eps_grid"] = report.eps_grid;
  j["base_cost"] = report.base_cost;
  j["min_delta_J"] = report.min_delta_J;
  j["gradient_norm"] = report.gradient_norm;
  j["min_curvature"] = report.min_curvature;
  j["failed_directions"] = report.failed_directions;
  json fits = json::array();
  for (const auto& f : report.fits) {
    json fj = {{"a0", f.a0}, {"a1", f.a1}, {"a2", f.a2}, {"failed", f.failed}};
    if (f.failed) fj["error"] = f.error;
    fits.push_back(fj);
  }
  j["fits"] = fits;
  return j;
}

json assumption_json(const AssumptionReport& report) {
  json j;
  json clauses = json::array();
  for (const auto& c : report.clauses)
    clauses.push_back({{"clause", c.clause}, {"status", status_name(c.status)}, {"detail", c.detail}});
  j["clauses"] = clauses;
  j["all_passed"] = report.all_passed();
  j["failures"] = report.failures;
  j["N"] = report.N;
  auto opt = [&](const char* key, const std::optional<double>& v) { j[key] = v ? json(*v) : json(); };
  opt("gamma_f", report.gamma_f);
  opt("gamma_g", report.gamma_g);
  opt("gamma0_f", report.gamma0_f);
  opt("gamma0_g", report.gamma0_g);
  opt("a", report.a_const);
  opt("lambda_lower", report.lambda_lower);
  opt("lambda_upper", report.lambda_upper);
  opt("major_lower", report.major_lower);
  opt("major_upper", report.major_upper);
  opt("lipschitz0", report.lipschitz0);
  opt("beta1", report.beta1);
  opt("mu1", report.mu1);
  return j;
}

json manifest(const std::string& command, const std::string& config_bytes, std::uint64_t seed, std::size_t threads,
              double wall_seconds) {
  return {{"command", command},
          {"config_hash", hex64(fnv1a(config_bytes))},
          {"seed", seed},
          {"threads", threads},
          {"version", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"wall_seconds", wall_seconds}};
}

void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir.string() + "': " + ec.message());
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + (dir / name).string() + "'");
  out << content;
}

}  // namespace eqprice
