#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>

#include <json.hpp>

#include "eqprice/finite_market.hpp"
#include "eqprice/mean_field.hpp"
#include "eqprice/metrics.hpp"
#include "eqprice/model.hpp"
#include "eqprice/optimality.hpp"

namespace eqprice {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t x);

/// Long-format CSV: node_id, t, entity, field_name, component_index, value.
/// entity is an agent index, MAJOR or PRICE.
void write_equilibrium_csv(std::ostream& os, const EquilibriumSolution& sol);
/// Same layout; entity is an atom index, MAJOR, MEAN or PRICE.
void write_mfg_csv(std::ostream& os, const MfgSolution& sol);
/// node_id, level, t, parent, probability, c0 components.
void write_lattice_csv(std::ostream& os, const NoiseLattice& lattice, const NodeField* c0 = nullptr);
/// N, resample, price_gap, w2_g, w2_rT, int_w2_y, int_w2_p, epsilon_N.
void write_convergence_csv(std::ostream& os, const ConvergenceReport& report);
/// direction_id, eps, delta_J.
void write_perturbation_csv(std::ostream& os, const PerturbationReport& report);

nlohmann::json diagnostics_json(const SolveDiagnostics& d);
nlohmann::json equilibrium_summary(const EquilibriumSolution& sol);
nlohmann::json mfg_summary(const MfgSolution& sol);
nlohmann::json convergence_summary(const ConvergenceReport& report);
nlohmann::json perturbation_summary(const PerturbationReport& report);
nlohmann::json assumption_json(const AssumptionReport& report);

/// Run record: command, config hash, seed, thread count, library version, wall time.
nlohmann::json manifest(const std::string& command, const std::string& config_bytes, std::uint64_t seed,
                        std::size_t threads, double wall_seconds);

/// Writes `content` to dir/name, creating dir.
void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& content);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace eqprice
