#pragma once

#include <string>

#include <json.hpp>

#include "eqprice/model.hpp"

namespace eqprice {

/// Model file reader. JSON files (".json") are read directly; anything else is read as
/// the sectioned text format and converted to the same JSON document first.
///
/// Text format:
///   [dimensions]  n, d0, N
///   [constants]   delta, maturity, lambda, lambda0
///   [minor]       l, sigma0, sigma, cf, hf, cg, hg
///   [agent]       per-agent bundle, repeated in agent order
///   [major]       l0, s0, dfdx.c, dfdx.h, dgdx.c, dgdx.h, chi0
///   [noise]       kind (constant | gaussian_walk), initial, drift, vol
///   [atom]        weight, xi, ci; repeated
/// Matrices are written row by row: "1 0.2; 0.2 1". A single number is s*I for square
/// coefficients and fills every entry otherwise. A coefficient takes optional sub-keys
///   key.t = knot times, key.values = m1 | m2 | ...   (piecewise-linear table added to the base)
///   key.c0[j] = matrix, key.ci[j] = matrix           (affine terms)
/// Unknown sections or keys are rejected.
ModelSpec load_model(const std::string& path);
ModelSpec parse_model_text(const std::string& text);
nlohmann::json text_to_json(const std::string& text);
ModelSpec model_from_json(const nlohmann::json& doc);
nlohmann::json model_to_json(const ModelSpec& spec);

/// Sectioned text (same grammar as the model format, any section names) as JSON.
nlohmann::json parse_sections(const std::string& text, bool repeated_sections_as_arrays);

}  // namespace eqprice
