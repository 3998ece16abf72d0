#include "eqprice/model_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "eqprice/errors.hpp"

namespace eqprice {

using nlohmann::json;

namespace {

using Index = Eigen::Index;

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_number(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end && *end == '\0';
}

/// "1 2; 3 4" -> [[1,2],[3,4]], "1 2" -> [1,2], "1" -> 1. Non-numeric text stays a string.
json parse_matrix_value(const std::string& raw) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : split(raw, ';')) {
    std::string row = r;
    for (char& c : row)
      if (c == ',') c = ' ';
    std::istringstream is(row);
    std::vector<double> vals;
    std::string tok;
    while (is >> tok) {
      double x;
      if (!parse_number(tok, x)) return json(trim(raw));
      vals.push_back(x);
    }
    if (vals.empty()) return json(trim(raw));
    rows.push_back(vals);
  }
  if (rows.size() == 1 && rows[0].size() == 1) return rows[0][0];
  if (rows.size() == 1) return rows[0];
  return rows;
}

json parse_value(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true") return true;
  if (v == "false") return false;
  if (key == "values") {
    json arr = json::array();
    for (const auto& part : split(v, '|')) arr.push_back(parse_matrix_value(trim(part)));
    return arr;
  }
  return parse_matrix_value(v);
}

/// Inserts value at a dotted key path; "c0[2]" addresses an array slot.
void insert_path(json& obj, const std::string& key, const std::string& raw, int line) {
  auto parts = split(key, '.');
  json* cur = &obj;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::string name = trim(parts[k]);
    long slot = -1;
    auto lb = name.find('[');
    if (lb != std::string::npos) {
      auto rb = name.find(']', lb);
      if (rb == std::string::npos || rb != name.size() - 1)
        throw ValidationError("line " + std::to_string(line) + ": malformed index in key '" + key + "'");
      slot = std::stol(name.substr(lb + 1, rb - lb - 1));
      if (slot < 0) throw ValidationError("line " + std::to_string(line) + ": negative index in key '" + key + "'");
      name = name.substr(0, lb);
    }
    if (name.empty()) throw ValidationError("line " + std::to_string(line) + ": empty key segment in '" + key + "'");
    const bool last = k + 1 == parts.size();
    if (!cur->is_object()) {
      json base = *cur;
      *cur = json::object();
      if (!base.is_null()) (*cur)["value"] = base;
    }
    json& slot_parent = (*cur)[name];
    json* target = &slot_parent;
    if (slot >= 0) {
      if (slot_parent.is_null()) slot_parent = json::array();
      if (!slot_parent.is_array())
        throw ValidationError("line " + std::to_string(line) + ": key '" + key + "' mixes indexed and plain forms");
      while (slot_parent.size() <= static_cast<std::size_t>(slot)) slot_parent.push_back(nullptr);
      target = &slot_parent[static_cast<std::size_t>(slot)];
    }
    if (last) {
      json val = parse_value(name, raw);
      if (target->is_object())
        (*target)["value"] = val;
      else if (!target->is_null())
        throw ValidationError("line " + std::to_string(line) + ": duplicate key '" + key + "'");
      else
        *target = val;
    } else {
      cur = target;
    }
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) throw ValidationError("unknown key '" + item.key() + "' in " + where);
}

Matrix matrix_from(const json& j, Index rows, Index cols, const std::string& name) {
  if (j.is_null()) return Matrix::Zero(rows, cols);
  if (j.is_number()) {
    const double s = j.get<double>();
    if (rows == cols) return s * Matrix::Identity(rows, cols);
    return Matrix::Constant(rows, cols, s);
  }
  if (!j.is_array()) throw ValidationError(name + ": expected a number or a matrix");
  if (!j.empty() && j[0].is_array()) {
    if (static_cast<Index>(j.size()) != rows)
      throw ValidationError(name + ": expected " + std::to_string(rows) + " rows, got " + std::to_string(j.size()));
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const json& row = j[static_cast<std::size_t>(r)];
      if (!row.is_array() || static_cast<Index>(row.size()) != cols)
        throw ValidationError(name + ": row " + std::to_string(r) + " must have " + std::to_string(cols) + " entries");
      for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
  }
  const Index len = static_cast<Index>(j.size());
  Matrix m(rows, cols);
  if (len == rows * cols) {
    for (Index k = 0; k < len; ++k) m(k / cols, k % cols) = j[static_cast<std::size_t>(k)].get<double>();
    return m;
  }
  throw ValidationError(name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + " entries, got " +
                        std::to_string(len));
}

Vector vector_from(const json& j, Index n, const std::string& name) {
  if (j.is_number() && n != 1) return Vector::Constant(n, j.get<double>());
  return matrix_from(j, n, 1, name).col(0);
}

Coefficient coefficient_from(const json& j, const std::string& name, Index rows, Index cols, Index n) {
  Coefficient c(name, rows, cols);
  if (j.is_null()) return c;
  if (!j.is_object()) {
    c.set_base(matrix_from(j, rows, cols, name));
    return c;
  }
  reject_unknown(j, {"value", "t", "values", "c0", "ci"}, "coefficient '" + name + "'");
  if (j.contains("value")) c.set_base(matrix_from(j["value"], rows, cols, name));
  if (j.contains("t") || j.contains("values")) {
    if (!j.contains("t") || !j.contains("values")) throw ValidationError(name + ": a table needs both t and values");
    std::vector<double> knots;
    const json& t = j["t"];
    if (t.is_number())
      knots.push_back(t.get<double>());
    else
      for (const auto& x : t) knots.push_back(x.get<double>());
    std::vector<Matrix> vals;
    const json& v = j["values"];
    if (!v.is_array()) throw ValidationError(name + ".values must be a list of matrices");
    for (std::size_t k = 0; k < v.size(); ++k) vals.push_back(matrix_from(v[k], rows, cols, name + ".values"));
    c.set_table(std::move(knots), std::move(vals));
  }
  for (const char* key : {"c0", "ci"}) {
    if (!j.contains(key)) continue;
    const json& terms = j[key];
    if (!terms.is_array() || static_cast<Index>(terms.size()) > n)
      throw ValidationError(name + "." + key + " must list at most n matrices");
    std::vector<Matrix> m(static_cast<std::size_t>(n), Matrix::Zero(rows, cols));
    for (std::size_t k = 0; k < terms.size(); ++k)
      m[k] = matrix_from(terms[k], rows, cols, name + "." + key + "[" + std::to_string(k) + "]");
    if (std::string(key) == "c0")
      c.set_c0_terms(std::move(m));
    else
      c.set_ci_terms(std::move(m));
  }
  return c;
}

MinorCoefficients minor_from(const json& j, const Dimensions& d, const std::string& where) {
  MinorCoefficients m = MinorCoefficients::zero(d);
  if (j.is_null()) return m;
  reject_unknown(j, {"l", "sigma0", "sigma", "cf", "hf", "cg", "hg"}, where);
  const Index n = static_cast<Index>(d.n);
  auto get = [&](const char* k) { return j.contains(k) ? j[k] : json(); };
  m.l = coefficient_from(get("l"), "l", n, 1, n);
  m.sigma0 = coefficient_from(get("sigma0"), "sigma0", n, static_cast<Index>(d.d0), n);
  m.sigma = coefficient_from(get("sigma"), "sigma", n, static_cast<Index>(d.d), n);
  m.cf = coefficient_from(get("cf"), "cf", n, n, n);
  m.hf = coefficient_from(get("hf"), "hf", n, 1, n);
  m.cg = coefficient_from(get("cg"), "cg", n, n, n);
  m.hg = coefficient_from(get("hg"), "hg", n, 1, n);
  return m;
}

MajorGradient gradient_from(const json& j, const std::string& name, Index n) {
  MajorGradient g;
  g.c = Coefficient(name + ".c", n, n);
  g.h = Coefficient(name + ".h", n, 1);
  if (j.is_null()) return g;
  reject_unknown(j, {"c", "h"}, "major." + name);
  if (j.contains("c")) g.c = coefficient_from(j["c"], name + ".c", n, n, n);
  if (j.contains("h")) g.h = coefficient_from(j["h"], name + ".h", n, 1, n);
  return g;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json coefficient_json(const Coefficient& c) {
  json j = json::object();
  j["value"] = matrix_json(c.base());
  if (c.depends_on_time()) {
    j["t"] = c.knots();
    json vals = json::array();
    for (const auto& m : c.table_values()) vals.push_back(matrix_json(m));
    j["values"] = vals;
  }
  if (!c.c0_terms().empty()) {
    json t = json::array();
    for (const auto& m : c.c0_terms()) t.push_back(matrix_json(m));
    j["c0"] = t;
  }
  if (!c.ci_terms().empty()) {
    json t = json::array();
    for (const auto& m : c.ci_terms()) t.push_back(matrix_json(m));
    j["ci"] = t;
  }
  return j;
}

json minor_json(const MinorCoefficients& m) {
  return json{{"l", coefficient_json(m.l)},   {"sigma0", coefficient_json(m.sigma0)}, {"sigma", coefficient_json(m.sigma)},
              {"cf", coefficient_json(m.cf)}, {"hf", coefficient_json(m.hf)},         {"cg", coefficient_json(m.cg)},
              {"hg", coefficient_json(m.hg)}};
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

}  // namespace

json parse_sections(const std::string& text, bool repeated_sections_as_arrays) {
  json doc = json::object();
  json* cur = nullptr;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError("line " + std::to_string(lineno) + ": malformed section header");
      std::string name = trim(line.substr(1, line.size() - 2));
      if (repeated_sections_as_arrays && (name == "agent" || name == "atom")) {
        json& arr = doc[name + "s"];
        if (arr.is_null()) arr = json::array();
        arr.push_back(json::object());
        cur = &arr.back();
      } else {
        if (!seen.insert(name).second)
          throw ValidationError("line " + std::to_string(lineno) + ": section [" + name + "] appears twice");
        doc[name] = json::object();
        cur = &doc[name];
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("line " + std::to_string(lineno) + ": expected key = value");
    if (!cur) throw ValidationError("line " + std::to_string(lineno) + ": key outside of a section");
    insert_path(*cur, trim(line.substr(0, eq)), line.substr(eq + 1), lineno);
  }
  return doc;
}

json text_to_json(const std::string& text) { return parse_sections(text, true); }

ModelSpec model_from_json(const json& doc) {
  try {
    reject_unknown(doc, {"dimensions", "constants", "minor", "agents", "major", "noise", "atoms"}, "model");
    if (!doc.contains("dimensions")) throw ValidationError("model: missing [dimensions]");
    const json& dj = doc["dimensions"];
    reject_unknown(dj, {"n", "d0", "d", "N"}, "dimensions");
    Dimensions d;
    auto dim = [&](const char* k, std::size_t def) {
      if (!dj.contains(k)) return def;
      const json& v = dj[k];
      if (!v.is_number_integer() && !(v.is_number() && v.get<double>() == std::floor(v.get<double>())))
        throw ValidationError(std::string("dimensions.") + k + " must be an integer");
      const double x = v.get<double>();
      if (x < 0) throw ValidationError(std::string("dimensions.") + k + " must be non-negative");
      return static_cast<std::size_t>(x);
    };
    d.n = dim("n", 1);
    d.d0 = dim("d0", 1);
    d.d = dim("d", 0);
    d.N = dim("N", 1);
    if (d.n == 0) throw ValidationError("dimensions.n must be positive");
    const Index n = static_cast<Index>(d.n);

    ModelSpec spec = ModelSpec::zero(d);
    const json cj = doc.value("constants", json::object());
    reject_unknown(cj, {"delta", "maturity", "lambda", "lambda0"}, "constants");
    if (cj.contains("delta")) spec.delta = cj["delta"].get<double>();
    if (cj.contains("maturity")) spec.maturity_mode = cj["maturity"].get<bool>();
    if (cj.contains("lambda")) spec.lambda_minor = coefficient_from(cj["lambda"], "lambda", n, n, n);
    if (cj.contains("lambda0")) spec.lambda_major = coefficient_from(cj["lambda0"], "lambda0", n, n, n);

    if (doc.contains("minor")) spec.minor = minor_from(doc["minor"], d, "minor");
    if (doc.contains("agents")) {
      const json& aj = doc["agents"];
      if (!aj.is_array()) throw ValidationError("agents must be a list");
      for (std::size_t i = 0; i < aj.size(); ++i) spec.agents.push_back(minor_from(aj[i], d, "agent " + std::to_string(i)));
    }
    if (doc.contains("major")) {
      const json& mj = doc["major"];
      reject_unknown(mj, {"l0", "s0", "dfdx", "dgdx", "chi0"}, "major");
      auto get = [&](const char* k) { return mj.contains(k) ? mj[k] : json(); };
      spec.major.l0 = coefficient_from(get("l0"), "l0", n, 1, n);
      spec.major.s0 = coefficient_from(get("s0"), "s0", n, static_cast<Index>(d.d0), n);
      spec.major.dfdx = gradient_from(get("dfdx"), "dfdx", n);
      spec.major.dgdx = gradient_from(get("dgdx"), "dgdx", n);
      if (mj.contains("chi0")) spec.major.chi0 = vector_from(mj["chi0"], n, "chi0");
    }
    if (doc.contains("noise")) {
      const json& nj = doc["noise"];
      reject_unknown(nj, {"kind", "initial", "drift", "vol"}, "noise");
      const std::string kind = nj.value("kind", std::string("constant"));
      if (kind == "constant")
        spec.c0_law.kind = CommonLawKind::constant;
      else if (kind == "gaussian_walk")
        spec.c0_law.kind = CommonLawKind::gaussian_walk;
      else
        throw ValidationError("noise.kind must be constant or gaussian_walk, got '" + kind + "'");
      if (nj.contains("initial")) spec.c0_law.initial = vector_from(nj["initial"], n, "noise.initial");
      if (nj.contains("drift")) spec.c0_law.drift = vector_from(nj["drift"], n, "noise.drift");
      if (nj.contains("vol")) spec.c0_law.vol = matrix_from(nj["vol"], n, static_cast<Index>(d.d0), "noise.vol");
    }
    if (doc.contains("atoms")) {
      const json& aj = doc["atoms"];
      if (!aj.is_array() || aj.empty()) throw ValidationError("atoms must be a non-empty list");
      spec.atoms.clear();
      for (std::size_t a = 0; a < aj.size(); ++a) {
        const std::string where = "atom " + std::to_string(a);
        reject_unknown(aj[a], {"weight", "xi", "ci"}, where);
        Atom at;
        at.weight = aj[a].value("weight", 1.0);
        at.xi = aj[a].contains("xi") ? vector_from(aj[a]["xi"], n, where + ".xi") : Vector::Zero(n);
        at.ci = aj[a].contains("ci") ? vector_from(aj[a]["ci"], n, where + ".ci") : Vector::Zero(n);
        spec.atoms.push_back(at);
      }
    }
    validate(spec);
    return spec;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
}

json model_to_json(const ModelSpec& spec) {
  if (!spec.major.dfdx.affine() || !spec.major.dgdx.affine())
    throw UnsupportedError("major costs given by callables cannot be written to a model file");
  json doc;
  doc["dimensions"] = {{"n", spec.dims.n}, {"d0", spec.dims.d0}, {"d", spec.dims.d}, {"N", spec.dims.N}};
  doc["constants"] = {{"delta", spec.delta},
                      {"maturity", spec.maturity_mode},
                      {"lambda", coefficient_json(spec.lambda_minor)},
                      {"lambda0", coefficient_json(spec.lambda_major)}};
  doc["minor"] = minor_json(spec.minor);
  if (!spec.agents.empty()) {
    json a = json::array();
    for (const auto& b : spec.agents) a.push_back(minor_json(b));
    doc["agents"] = a;
  }
  doc["major"] = {{"l0", coefficient_json(spec.major.l0)},
                  {"s0", coefficient_json(spec.major.s0)},
                  {"dfdx", {{"c", coefficient_json(spec.major.dfdx.c)}, {"h", coefficient_json(spec.major.dfdx.h)}}},
                  {"dgdx", {{"c", coefficient_json(spec.major.dgdx.c)}, {"h", coefficient_json(spec.major.dgdx.h)}}},
                  {"chi0", vector_json(spec.major.chi0)}};
  json noise = {{"kind", spec.c0_law.kind == CommonLawKind::constant ? "constant" : "gaussian_walk"},
                {"initial", vector_json(spec.c0_law.initial)}};
  if (spec.c0_law.drift.size()) noise["drift"] = vector_json(spec.c0_law.drift);
  if (spec.c0_law.vol.size()) noise["vol"] = matrix_json(spec.c0_law.vol);
  doc["noise"] = noise;
  json atoms = json::array();
  for (const auto& a : spec.atoms) atoms.push_back({{"weight", a.weight}, {"xi", vector_json(a.xi)}, {"ci", vector_json(a.ci)}});
  doc["atoms"] = atoms;
  return doc;
}

ModelSpec parse_model_text(const std::string& text) { return model_from_json(text_to_json(text)); }

ModelSpec load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  if (is_json) {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw ValidationError("model file '" + path + "': " + e.what());
    }
    return model_from_json(doc);
  }
  return parse_model_text(text);
}

}  // namespace eqprice
