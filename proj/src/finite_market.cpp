#include "eqprice/finite_market.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "eqprice/errors.hpp"
#include "eqprice/parallel.hpp"

namespace eqprice {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

CachedCoefficient cache(const Coefficient& c, const ExogenousFields& exo, const Vector& ci, bool terminal) {
  CachedCoefficient out;
  const NoiseLattice& L = *exo.lattice;
  out.constant = !c.depends_on_time() && !c.depends_on_c0();
  if (out.constant) {
    out.values.push_back(c.evaluate(0.0, exo.c0.vec(0), ci));
    return out;
  }
  out.values.reserve(L.size());
  for (std::size_t v = 0; v < L.size(); ++v) {
    double t = terminal ? L.grid().T : L.time(v);
    out.values.push_back(c.evaluate(t, exo.c0.vec(v), ci));
  }
  return out;
}

void reject_idiosyncratic_diffusion(const MinorCoefficients& m) {
  const Coefficient& s = m.sigma;
  bool nonzero = s.base().size() > 0 && !s.base().isZero(0.0);
  for (const auto& v : s.table_values()) nonzero = nonzero || !v.isZero(0.0);
  nonzero = nonzero || s.depends_on_c0() || s.depends_on_ci();
  if (nonzero)
    throw UnsupportedError(
        "idiosyncratic diffusion sigma must be zero: idiosyncratic randomness is carried by the (xi, c^i) atoms");
}

}  // namespace

Population Population::from_atoms(const ModelSpec& spec, const std::vector<std::size_t>& atoms) {
  if (atoms.empty()) throw ValidationError("population needs at least one agent");
  if (!spec.homogeneous() && atoms.size() != spec.agents.size())
    throw ValidationError("heterogeneous model has " + std::to_string(spec.agents.size()) +
                          " agent bundles but the population has " + std::to_string(atoms.size()) + " agents");
  Population p;
  p.mass = static_cast<double>(atoms.size());
  p.agents.reserve(atoms.size());
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (atoms[i] >= spec.atoms.size()) throw ValidationError("atom index out of range");
    const Atom& a = spec.atoms[atoms[i]];
    p.agents.push_back(AgentData{atoms[i], spec.homogeneous() ? 0 : i, 1.0 / p.mass, a.xi, a.ci});
  }
  return p;
}

Population Population::sampled(const ModelSpec& spec, std::size_t N, std::uint64_t seed, std::uint64_t stream) {
  return from_atoms(spec, sample_idiosyncratic(spec.atoms, N, seed, stream));
}

Population Population::weighted_atoms(const ModelSpec& spec) {
  if (!spec.homogeneous()) throw UnsupportedError("a weighted atom population needs a homogeneous model");
  Population p;
  p.mass = 1.0;
  for (std::size_t a = 0; a < spec.atoms.size(); ++a)
    p.agents.push_back(AgentData{a, 0, spec.atoms[a].weight, spec.atoms[a].xi, spec.atoms[a].ci});
  return p;
}

std::shared_ptr<const MarketData> MarketData::build(const ModelSpec& spec, const LatticePtr& lattice,
                                                    const Population& population) {
  validate(spec);
  if (population.agents.empty()) throw ValidationError("market needs at least one minor agent");
  reject_idiosyncratic_diffusion(spec.minor);
  for (const auto& b : spec.agents) reject_idiosyncratic_diffusion(b);
  auto m = std::make_shared<MarketData>();
  m->spec = spec;
  m->lattice = lattice;
  m->exo = evaluate_exogenous(lattice, spec);
  m->population = population;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  for (const auto& a : population.agents) {
    if (a.xi.size() != idx(spec.dims.n) || a.ci.size() != idx(spec.dims.n))
      throw ValidationError("agent data must have n entries");
    auto key = std::make_pair(a.bundle, a.atom);
    auto it = seen.find(key);
    if (it == seen.end()) {
      const MinorCoefficients& b = spec.minor_of(a.bundle);
      MinorCache c;
      c.l = cache(b.l, m->exo, a.ci, false);
      c.sigma0 = cache(b.sigma0, m->exo, a.ci, false);
      c.cf = cache(b.cf, m->exo, a.ci, false);
      c.hf = cache(b.hf, m->exo, a.ci, false);
      c.cg = cache(b.cg, m->exo, a.ci, true);
      c.hg = cache(b.hg, m->exo, a.ci, true);
      it = seen.emplace(key, m->caches.size()).first;
      m->caches.push_back(std::move(c));
    }
    m->cache_of.push_back(it->second);
  }
  Vector no_ci = Vector::Zero(idx(spec.dims.n));
  m->major.l0 = cache(spec.major.l0, m->exo, no_ci, false);
  m->major.s0 = cache(spec.major.s0, m->exo, no_ci, false);
  return m;
}

Vector MarketData::major_dfdx(std::size_t v, const Vector& x0) const {
  return spec.major.dfdx.gradient(lattice->time(v), x0, exo.c0.vec(v));
}

Vector MarketData::major_dgdx(std::size_t v, const Vector& x0) const {
  return spec.major.dgdx.gradient(lattice->grid().T, x0, exo.c0.vec(v));
}

// ---------------------------------------------------------------------------
// Best response

BestResponseSystem::BestResponseSystem(MarketPtr market, std::size_t agent, NodeField price)
    : m_(std::move(market)), agent_(agent), price_(std::move(price)) {
  if (agent_ >= m_->population.size()) throw ValidationError("agent index out of range");
  if (price_.width() != m_->n() || !price_.lattice().same_structure(*m_->lattice))
    throw ValidationError("price field does not match the market lattice");
}

void BestResponseSystem::initial(VecRef out) const { out = m_->population.agents[agent_].xi; }

void BestResponseSystem::drift(std::size_t v, VecCRef, VecCRef B, VecCRef, VecRef out, Terms terms) const {
  auto Lbar = m_->exo.lambda_inv.mat(v);
  if (terms == Terms::all)
    out = -Lbar * (B + price_.vec(v)) + m_->coef(agent_).l.vec(v);
  else
    out = -Lbar * B;
}

void BestResponseSystem::diffusion(std::size_t v, VecCRef dW, VecRef out) const {
  if (dW.size()) out = m_->coef(agent_).sigma0.at(v) * dW;
}

void BestResponseSystem::driver(std::size_t v, VecCRef F, VecCRef, VecCRef, VecRef out, Terms terms) const {
  const auto& c = m_->coef(agent_);
  out = c.cf.at(v) * F;
  if (terms == Terms::all) out += c.hf.vec(v);
}

void BestResponseSystem::terminal(std::size_t v, VecCRef F, VecCRef, VecRef out, Terms terms) const {
  if (m_->spec.maturity_mode) {
    if (terms == Terms::all)
      out = -m_->exo.c0.vec(v);
    else
      out.setZero();
    return;
  }
  const auto& c = m_->coef(agent_);
  out = c.cg.at(v) * F;
  if (terms == Terms::all) out += -m_->spec.delta * price_.vec(v) + c.hg.vec(v);
}

// ---------------------------------------------------------------------------
// Clearing for a given flow

MinorClearingSystem::MinorClearingSystem(MarketPtr market, NodeField flow) : m_(std::move(market)), flow_(std::move(flow)) {
  if (flow_.width() != m_->n() || !flow_.lattice().same_structure(*m_->lattice))
    throw ValidationError("major flow field does not match the market lattice");
}

std::vector<Block> MinorClearingSystem::forward_blocks() const {
  std::vector<Block> b;
  for (std::size_t i = 0; i < m_->population.size(); ++i) b.push_back({"X", i * m_->n(), m_->n()});
  return b;
}

std::vector<Block> MinorClearingSystem::backward_blocks() const {
  std::vector<Block> b;
  for (std::size_t i = 0; i < m_->population.size(); ++i) b.push_back({"Y", i * m_->n(), m_->n()});
  return b;
}

std::vector<Block> MinorClearingSystem::aggregate_blocks() const {
  return {{"mY", 0, m_->n()}, {"mG", m_->n(), m_->n()}};
}

void MinorClearingSystem::initial(VecRef out) const {
  const std::size_t n = m_->n();
  for (std::size_t i = 0; i < m_->population.size(); ++i) out.segment(idx(i * n), idx(n)) = m_->population.agents[i].xi;
}

void MinorClearingSystem::aggregates(std::size_t v, VecCRef F, VecCRef B, VecRef out, Terms terms) const {
  const std::size_t n = m_->n();
  out.setZero();
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    const double w = m_->population.agents[i].weight;
    const auto& c = m_->coef(i);
    out.segment(0, idx(n)) += w * B.segment(idx(i * n), idx(n));
    out.segment(idx(n), idx(n)) += w * (c.cg.at(v) * F.segment(idx(i * n), idx(n)));
    if (terms == Terms::all) out.segment(idx(n), idx(n)) += w * c.hg.vec(v);
  }
}

void MinorClearingSystem::drift(std::size_t v, VecCRef, VecCRef B, VecCRef A, VecRef out, Terms terms) const {
  const std::size_t n = m_->n();
  auto Lbar = m_->exo.lambda_inv.mat(v);
  const auto mY = A.segment(0, idx(n));
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    auto o = out.segment(idx(i * n), idx(n));
    o = -Lbar * (B.segment(idx(i * n), idx(n)) - mY);
    if (terms == Terms::all) o += -flow_.vec(v) + m_->coef(i).l.vec(v);
  }
}

void MinorClearingSystem::diffusion(std::size_t v, VecCRef dW, VecRef out) const {
  if (!dW.size()) return;
  const std::size_t n = m_->n();
  for (std::size_t i = 0; i < m_->population.size(); ++i)
    out.segment(idx(i * n), idx(n)) = m_->coef(i).sigma0.at(v) * dW;
}

void MinorClearingSystem::driver(std::size_t v, VecCRef F, VecCRef, VecCRef, VecRef out, Terms terms) const {
  const std::size_t n = m_->n();
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    const auto& c = m_->coef(i);
    auto o = out.segment(idx(i * n), idx(n));
    o = c.cf.at(v) * F.segment(idx(i * n), idx(n));
    if (terms == Terms::all) o += c.hf.vec(v);
  }
}

void MinorClearingSystem::terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const {
  const std::size_t n = m_->n();
  if (m_->spec.maturity_mode) {
    for (std::size_t i = 0; i < m_->population.size(); ++i)
      out.segment(idx(i * n), idx(n)) = terms == Terms::all ? Vector(-m_->exo.c0.vec(v)) : Vector::Zero(idx(n));
    return;
  }
  const double dr = m_->delta_ratio();
  const auto mG = A.segment(idx(n), idx(n));
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    const auto& c = m_->coef(i);
    auto o = out.segment(idx(i * n), idx(n));
    o = dr * mG + c.cg.at(v) * F.segment(idx(i * n), idx(n));
    if (terms == Terms::all) o += c.hg.vec(v);
  }
}

// ---------------------------------------------------------------------------
// Full equilibrium

namespace {

struct FullLayout {
  std::size_t n;
  Index x0() const { return 0; }
  Index X(std::size_t i) const { return idx(n + 2 * n * i); }
  Index R(std::size_t i) const { return idx(n + 2 * n * i + n); }
  // Backward blocks share offsets: P0 <-> x0, Y^i <-> X^i, P^i <-> R^i.
  Index mY() const { return 0; }
  Index mP() const { return idx(n); }
  Index b() const { return idx(2 * n); }
  Index mG() const { return idx(3 * n); }
  Index mR() const { return idx(4 * n); }
};

}  // namespace

EquilibriumSystem::EquilibriumSystem(MarketPtr market) : m_(std::move(market)) {}

std::vector<Block> EquilibriumSystem::forward_blocks() const {
  const std::size_t n = m_->n();
  std::vector<Block> b{{"x0", 0, n}};
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    b.push_back({"X", n + 2 * n * i, n});
    b.push_back({"R", n + 2 * n * i + n, n});
  }
  return b;
}

std::vector<Block> EquilibriumSystem::backward_blocks() const {
  const std::size_t n = m_->n();
  std::vector<Block> b{{"P0", 0, n}};
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    b.push_back({"Y", n + 2 * n * i, n});
    b.push_back({"P", n + 2 * n * i + n, n});
  }
  return b;
}

std::vector<Block> EquilibriumSystem::aggregate_blocks() const {
  const std::size_t n = m_->n();
  return {{"mY", 0, n}, {"mP", n, n}, {"b", 2 * n, n}, {"mG", 3 * n, n}, {"mR", 4 * n, n}};
}

void EquilibriumSystem::initial(VecRef out) const {
  const FullLayout lay{m_->n()};
  const Index n = idx(m_->n());
  out.segment(lay.x0(), n) = m_->spec.major.chi0;
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    out.segment(lay.X(i), n) = m_->population.agents[i].xi;
    out.segment(lay.R(i), n).setZero();
  }
}

void EquilibriumSystem::aggregates(std::size_t v, VecCRef F, VecCRef B, VecRef out, Terms terms) const {
  const FullLayout lay{m_->n()};
  const Index n = idx(m_->n());
  out.setZero();
  auto mY = out.segment(lay.mY(), n);
  auto mP = out.segment(lay.mP(), n);
  auto mG = out.segment(lay.mG(), n);
  auto mR = out.segment(lay.mR(), n);
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    const double w = m_->population.agents[i].weight;
    const auto& c = m_->coef(i);
    mY += w * B.segment(lay.X(i), n);
    mP += w * B.segment(lay.R(i), n);
    mR += w * F.segment(lay.R(i), n);
    mG += w * (c.cg.at(v) * F.segment(lay.X(i), n));
    if (terms == Terms::all) mG += w * c.hg.vec(v);
  }
  const bool forced_zero = m_->lattice->is_leaf(v) && !m_->spec.maturity_mode;
  if (!forced_zero) out.segment(lay.b(), n) = m_->exo.v0.mat(v) * (-B.segment(lay.x0(), n) + mY + mP);
}

void EquilibriumSystem::drift(std::size_t v, VecCRef, VecCRef B, VecCRef A, VecRef out, Terms terms) const {
  const FullLayout lay{m_->n()};
  const Index n = idx(m_->n());
  auto Lbar = m_->exo.lambda_inv.mat(v);
  const auto b = A.segment(lay.b(), n);
  const auto mY = A.segment(lay.mY(), n);
  const auto mP = A.segment(lay.mP(), n);
  out.segment(lay.x0(), n) = b;
  if (terms == Terms::all) out.segment(lay.x0(), n) += m_->major.l0.vec(v);
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    auto X = out.segment(lay.X(i), n);
    X = -Lbar * (B.segment(lay.X(i), n) - mY) - b;
    if (terms == Terms::all) X += m_->coef(i).l.vec(v);
    out.segment(lay.R(i), n) = Lbar * (B.segment(lay.R(i), n) - mP) + b;
  }
}

void EquilibriumSystem::diffusion(std::size_t v, VecCRef dW, VecRef out) const {
  if (!dW.size()) return;
  const FullLayout lay{m_->n()};
  const Index n = idx(m_->n());
  out.segment(lay.x0(), n) = m_->major.s0.at(v) * dW;
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    out.segment(lay.X(i), n) = m_->coef(i).sigma0.at(v) * dW;
    out.segment(lay.R(i), n).setZero();
  }
}

void EquilibriumSystem::driver(std::size_t v, VecCRef F, VecCRef, VecCRef, VecRef out, Terms terms) const {
  const FullLayout lay{m_->n()};
  const Index n = idx(m_->n());
  const auto& g = m_->spec.major.dfdx;
  if (terms == Terms::all) {
    out.segment(lay.x0(), n) = m_->major_dfdx(v, F.segment(lay.x0(), n));
  } else {
    out.segment(lay.x0(), n) = g.c.evaluate(m_->lattice->time(v), m_->exo.c0.vec(v)) * F.segment(lay.x0(), n);
  }
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    const auto& c = m_->coef(i);
    auto Y = out.segment(lay.X(i), n);
    Y = c.cf.at(v) * F.segment(lay.X(i), n);
    if (terms == Terms::all) Y += c.hf.vec(v);
    out.segment(lay.R(i), n) = -(c.cf.at(v) * F.segment(lay.R(i), n));
  }
}

void EquilibriumSystem::terminal(std::size_t v, VecCRef F, VecCRef A, VecRef out, Terms terms) const {
  const FullLayout lay{m_->n()};
  const Index n = idx(m_->n());
  if (m_->spec.maturity_mode) {
    out.setZero();
    if (terms == Terms::all) {
      Vector c0 = m_->exo.c0.vec(v);
      out.segment(lay.x0(), n) = -c0;
      for (std::size_t i = 0; i < m_->population.size(); ++i) out.segment(lay.X(i), n) = -c0;
    }
    return;
  }
  const double dr = m_->delta_ratio();
  if (terms == Terms::all)
    out.segment(lay.x0(), n) = m_->major_dgdx(v, F.segment(lay.x0(), n));
  else
    out.segment(lay.x0(), n) = m_->spec.major.dgdx.c.evaluate(m_->lattice->grid().T, m_->exo.c0.vec(v)) *
                               F.segment(lay.x0(), n);
  const auto mG = A.segment(lay.mG(), n);
  const auto mR = A.segment(lay.mR(), n);
  for (std::size_t i = 0; i < m_->population.size(); ++i) {
    const auto& c = m_->coef(i);
    auto Y = out.segment(lay.X(i), n);
    Y = dr * mG + c.cg.at(v) * F.segment(lay.X(i), n);
    if (terms == Terms::all) Y += c.hg.vec(v);
    out.segment(lay.R(i), n) = -(c.cg.at(v) * (F.segment(lay.R(i), n) + dr * mR));
  }
}

// ---------------------------------------------------------------------------

NodeSolution solve_system(const FbsdeSystem& system, const SolverChoice& choice) {
  if (choice.method == SolveMethod::direct) return solve_direct(system, choice.direct);
  return solve_picard(system, choice.picard);
}

namespace {

NodeField slice(const NodeField& f, std::size_t offset, std::size_t size) {
  NodeField out(f.lattice_ptr(), size);
  for (std::size_t v = 0; v < f.nodes(); ++v) out.vec(v) = f.vec(v).segment(idx(offset), idx(size));
  return out;
}

void finish_controls(EquilibriumSolution& s) {
  const MarketData& m = *s.market;
  const NoiseLattice& L = *m.lattice;
  s.alpha_hat.clear();
  for (std::size_t i = 0; i < s.Y.size(); ++i) {
    NodeField a(m.lattice, m.n());
    for (std::size_t v = 0; v < L.size(); ++v)
      a.vec(v) = -m.exo.lambda_inv.mat(v) * (s.Y[i].vec(v) + s.price.vec(v));
    s.alpha_hat.push_back(std::move(a));
  }
  s.clearing_residual = clearing_residual(s);
}

}  // namespace

std::vector<BestResponse> minor_best_response(const MarketPtr& market, const NodeField& price,
                                              const SolverChoice& choice, std::size_t threads) {
  std::vector<BestResponse> out(market->population.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    BestResponseSystem sys(market, i, price);
    NodeSolution sol = solve_system(sys, choice);
    BestResponse br;
    br.X = std::move(sol.forward);
    br.Y = std::move(sol.backward);
    br.z = std::move(sol.z);
    br.alpha = NodeField(market->lattice, market->n());
    for (std::size_t v = 0; v < market->lattice->size(); ++v)
      br.alpha.vec(v) = -market->exo.lambda_inv.mat(v) * (br.Y.vec(v) + price.vec(v));
    br.diagnostics = sol.diagnostics;
    out[i] = std::move(br);
  });
  return out;
}

EquilibriumSolution solve_minor_clearing(const MarketPtr& market, const NodeField& flow, const SolverChoice& choice) {
  MinorClearingSystem sys(market, flow);
  EquilibriumSolution s;
  s.market = market;
  s.solution = solve_system(sys, choice);
  const std::size_t n = market->n();
  for (std::size_t i = 0; i < market->population.size(); ++i) {
    s.X.push_back(slice(s.solution.forward, i * n, n));
    s.Y.push_back(slice(s.solution.backward, i * n, n));
  }
  s.beta_hat = flow;
  s.price = NodeField(market->lattice, n);
  for (std::size_t v = 0; v < market->lattice->size(); ++v)
    s.price.vec(v) = -s.solution.aggregates.vec(v).segment(0, idx(n)) + market->exo.lambda.mat(v) * flow.vec(v);
  finish_controls(s);
  return s;
}

EquilibriumSolution solve_full_equilibrium(const MarketPtr& market, const SolverChoice& choice, bool check) {
  if (check) {
    AssumptionReport rep = check_assumptions(market->spec, default_sample_points(market->spec, market->lattice->grid().T));
    if (!rep.all_passed()) {
      std::string msg = "assumption check failed:";
      for (const auto& f : rep.failures) msg += " " + f + ";";
      throw AssumptionError(msg);
    }
  }
  EquilibriumSystem sys(market);
  EquilibriumSolution s;
  s.market = market;
  s.has_major = true;
  s.solution = solve_system(sys, choice);
  const std::size_t n = market->n();
  const FullLayout lay{n};
  s.x0 = slice(s.solution.forward, 0, n);
  s.p0 = slice(s.solution.backward, 0, n);
  for (std::size_t i = 0; i < market->population.size(); ++i) {
    s.X.push_back(slice(s.solution.forward, static_cast<std::size_t>(lay.X(i)), n));
    s.R.push_back(slice(s.solution.forward, static_cast<std::size_t>(lay.R(i)), n));
    s.Y.push_back(slice(s.solution.backward, static_cast<std::size_t>(lay.X(i)), n));
    s.P.push_back(slice(s.solution.backward, static_cast<std::size_t>(lay.R(i)), n));
  }
  s.beta_hat = slice(s.solution.aggregates, static_cast<std::size_t>(lay.b()), n);
  s.price = NodeField(market->lattice, n);
  for (std::size_t v = 0; v < market->lattice->size(); ++v) {
    auto a = s.solution.aggregates.vec(v);
    s.price.vec(v) = -a.segment(lay.mY(), idx(n)) + market->exo.lambda.mat(v) * a.segment(lay.b(), idx(n));
  }
  finish_controls(s);
  return s;
}

double clearing_residual(const EquilibriumSolution& s) {
  const MarketData& m = *s.market;
  const NoiseLattice& L = *m.lattice;
  double worst = 0.0;
  for (std::size_t v = 0; v < L.size(); ++v) {
    if (L.is_leaf(v)) continue;
    Vector total = m.population.mass * s.beta_hat.vec(v);
    auto Lbar = m.exo.lambda_inv.mat(v);
    for (std::size_t i = 0; i < s.Y.size(); ++i)
      total += m.population.mass * m.population.agents[i].weight * (-Lbar * (s.Y[i].vec(v) + s.price.vec(v)));
    worst = std::max(worst, max_abs(total));
  }
  return worst;
}

}  // namespace eqprice
