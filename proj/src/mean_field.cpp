#include "eqprice/mean_field.hpp"

#include <string>

#include "eqprice/errors.hpp"
#include "eqprice/parallel.hpp"

namespace eqprice {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

void require_closing(const MinorCoefficients& m) {
  if (m.cf.depends_on_ci() || m.cg.depends_on_ci())
    throw UnsupportedError(
        "conditional means do not close when c^f or c^g depend on c^i; solve the weighted-atom finite market "
        "(Population::weighted_atoms) on a small lattice instead");
}

}  // namespace

std::shared_ptr<const MfgData> MfgData::build(const ModelSpec& spec, const LatticePtr& lattice) {
  if (!spec.homogeneous()) throw UnsupportedError("the mean-field system needs a homogeneous model");
  require_closing(spec.minor);
  auto d = std::make_shared<MfgData>();
  d->market = MarketData::build(spec, lattice, Population::weighted_atoms(spec));
  const MarketData& m = *d->market;
  const std::size_t n = m.n(), d0 = spec.dims.d0;
  d->mean.l = NodeField(lattice, n);
  d->mean.sigma0 = NodeField(lattice, n, d0);
  d->mean.hf = NodeField(lattice, n);
  d->mean.hg = NodeField(lattice, n);
  d->mean.xi = Vector::Zero(idx(n));
  for (std::size_t a = 0; a < m.population.size(); ++a) {
    const double w = m.population.agents[a].weight;
    d->mean.xi += w * m.population.agents[a].xi;
  }
  for (std::size_t v = 0; v < lattice->size(); ++v) {
    for (std::size_t a = 0; a < m.population.size(); ++a) {
      const double w = m.population.agents[a].weight;
      const auto& c = m.coef(a);
      d->mean.l.vec(v) += w * c.l.vec(v);
      if (d0) d->mean.sigma0.mat(v) += w * c.sigma0.at(v);
      d->mean.hf.vec(v) += w * c.hf.vec(v);
      d->mean.hg.vec(v) += w * c.hg.vec(v);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------

MeanSystem::MeanSystem(MfgDataPtr data) : d_(std::move(data)) {}

bool MeanSystem::affine() const {
  const auto& major = d_->market->spec.major;
  return major.dfdx.affine() && major.dgdx.affine();
}

std::vector<Block> MeanSystem::forward_blocks() const {
  return {{"x0", 0, n()}, {"xbar", n(), n()}, {"rbar", 2 * n(), n()}};
}

std::vector<Block> MeanSystem::backward_blocks() const {
  return {{"p0", 0, n()}, {"ybar", n(), n()}, {"pbar", 2 * n(), n()}};
}

void MeanSystem::initial(VecRef out) const {
  const Index k = idx(n());
  out.segment(0, k) = d_->market->spec.major.chi0;
  out.segment(k, k) = d_->mean.xi;
  out.segment(2 * k, k).setZero();
}

void MeanSystem::aggregates(std::size_t v, VecCRef, VecCRef B, VecRef out, Terms) const {
  const MarketData& m = *d_->market;
  const Index k = idx(n());
  if (m.lattice->is_leaf(v) && !m.spec.maturity_mode)
    out.setZero();
  else
    out = m.exo.v0.mat(v) * (-B.segment(0, k) + B.segment(k, k) + B.segment(2 * k, k));
}

void MeanSystem::drift(std::size_t v, VecCRef, VecCRef, VecCRef A, VecRef out, Terms terms) const {
  const Index k = idx(n());
  out.segment(0, k) = A;
  out.segment(k, k) = -A;
  out.segment(2 * k, k) = A;
  if (terms == Terms::all) {
    out.segment(0, k) += d_->market->major.l0.vec(v);
    out.segment(k, k) += d_->mean.l.vec(v);
  }
}

void MeanSystem::diffusion(std::size_t v, VecCRef dW, VecRef out) const {
  if (!dW.size()) return;
  const Index k = idx(n());
  out.segment(0, k) = d_->market->major.s0.at(v) * dW;
  out.segment(k, k) = d_->mean.sigma0.mat(v) * dW;
  out.segment(2 * k, k).setZero();
}

void MeanSystem::driver(std::size_t v, VecCRef F, VecCRef, VecCRef, VecRef out, Terms terms) const {
  const MarketData& m = *d_->market;
  const Index k = idx(n());
  if (terms == Terms::all)
    out.segment(0, k) = m.major_dfdx(v, F.segment(0, k));
  else
    out.segment(0, k) = m.spec.major.dfdx.c.evaluate(m.lattice->time(v), m.exo.c0.vec(v)) * F.segment(0, k);
  const Matrix& cf = m.coef(0).cf.at(v);
  out.segment(k, k) = cf * F.segment(k, k);
  if (terms == Terms::all) out.segment(k, k) += d_->mean.hf.vec(v);
  out.segment(2 * k, k) = -(cf * F.segment(2 * k, k));
}

void MeanSystem::terminal(std::size_t v, VecCRef F, VecCRef, VecRef out, Terms terms) const {
  const MarketData& m = *d_->market;
  const Index k = idx(n());
  if (m.spec.maturity_mode) {
    out.setZero();
    if (terms == Terms::all) {
      out.segment(0, k) = -m.exo.c0.vec(v);
      out.segment(k, k) = -m.exo.c0.vec(v);
    }
    return;
  }
  const double amp = 1.0 / (1.0 - m.spec.delta);
  if (terms == Terms::all)
    out.segment(0, k) = m.major_dgdx(v, F.segment(0, k));
  else
    out.segment(0, k) = m.spec.major.dgdx.c.evaluate(m.lattice->grid().T, m.exo.c0.vec(v)) * F.segment(0, k);
  const Matrix& cg = m.coef(0).cg.at(v);
  out.segment(k, k) = amp * (cg * F.segment(k, k));
  if (terms == Terms::all) out.segment(k, k) += amp * d_->mean.hg.vec(v);
  out.segment(2 * k, k) = -amp * (cg * F.segment(2 * k, k));
}

// ---------------------------------------------------------------------------

MeanMinorSystem::MeanMinorSystem(MfgDataPtr data, NodeField flow) : d_(std::move(data)), flow_(std::move(flow)) {
  if (flow_.width() != d_->market->n() || !flow_.lattice().same_structure(*d_->market->lattice))
    throw ValidationError("major flow field does not match the market lattice");
}

void MeanMinorSystem::initial(VecRef out) const { out = d_->mean.xi; }

void MeanMinorSystem::drift(std::size_t v, VecCRef, VecCRef, VecCRef, VecRef out, Terms terms) const {
  if (terms == Terms::all)
    out = -flow_.vec(v) + d_->mean.l.vec(v);
  else
    out.setZero();
}

void MeanMinorSystem::diffusion(std::size_t v, VecCRef dW, VecRef out) const {
  if (dW.size()) out = d_->mean.sigma0.mat(v) * dW;
}

void MeanMinorSystem::driver(std::size_t v, VecCRef F, VecCRef, VecCRef, VecRef out, Terms terms) const {
  out = d_->market->coef(0).cf.at(v) * F;
  if (terms == Terms::all) out += d_->mean.hf.vec(v);
}

void MeanMinorSystem::terminal(std::size_t v, VecCRef F, VecCRef, VecRef out, Terms terms) const {
  const MarketData& m = *d_->market;
  if (m.spec.maturity_mode) {
    if (terms == Terms::all)
      out = -m.exo.c0.vec(v);
    else
      out.setZero();
    return;
  }
  const double amp = 1.0 / (1.0 - m.spec.delta);
  out = amp * (m.coef(0).cg.at(v) * F);
  if (terms == Terms::all) out += amp * d_->mean.hg.vec(v);
}

// ---------------------------------------------------------------------------

DeviationSystem::DeviationSystem(MfgDataPtr data, std::size_t atom) : d_(std::move(data)), atom_(atom) {
  if (atom_ >= d_->market->population.size()) throw ValidationError("atom index out of range");
}

void DeviationSystem::initial(VecRef out) const { out = d_->market->population.agents[atom_].xi - d_->mean.xi; }

void DeviationSystem::drift(std::size_t v, VecCRef, VecCRef B, VecCRef, VecRef out, Terms terms) const {
  out = -d_->market->exo.lambda_inv.mat(v) * B;
  if (terms == Terms::all) out += d_->market->coef(atom_).l.vec(v) - d_->mean.l.vec(v);
}

void DeviationSystem::diffusion(std::size_t v, VecCRef dW, VecRef out) const {
  if (dW.size()) out = (d_->market->coef(atom_).sigma0.at(v) - Matrix(d_->mean.sigma0.mat(v))) * dW;
}

void DeviationSystem::driver(std::size_t v, VecCRef F, VecCRef, VecCRef, VecRef out, Terms terms) const {
  const auto& c = d_->market->coef(atom_);
  out = c.cf.at(v) * F;
  if (terms == Terms::all) out += c.hf.vec(v) - d_->mean.hf.vec(v);
}

void DeviationSystem::terminal(std::size_t v, VecCRef F, VecCRef, VecRef out, Terms terms) const {
  if (d_->market->spec.maturity_mode) {
    out.setZero();
    return;
  }
  const auto& c = d_->market->coef(atom_);
  out = c.cg.at(v) * F;
  if (terms == Terms::all) out += c.hg.vec(v) - d_->mean.hg.vec(v);
}

// ---------------------------------------------------------------------------

std::unique_ptr<MeanSystem> reduce_conditional_means(const ModelSpec& spec, const LatticePtr& lattice) {
  return std::make_unique<MeanSystem>(MfgData::build(spec, lattice));
}

namespace {

NodeField slice(const NodeField& f, std::size_t offset, std::size_t size) {
  NodeField out(f.lattice_ptr(), size);
  for (std::size_t v = 0; v < f.nodes(); ++v) out.vec(v) = f.vec(v).segment(idx(offset), idx(size));
  return out;
}

NodeField sum(const NodeField& a, const NodeField& b) {
  NodeField out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

}  // namespace

NodeField MfgSolution::atom_x(std::size_t a) const { return sum(xbar, dx.at(a)); }

NodeField MfgSolution::atom_y(std::size_t a) const { return sum(ybar, dy.at(a)); }

MfgSolution solve_mfg(const ModelSpec& spec, const LatticePtr& lattice, const MfgOptions& options) {
  if (options.check) {
    AssumptionReport rep = check_assumptions(spec, default_sample_points(spec, lattice->grid().T));
    if (!rep.all_passed()) {
      std::string msg = "assumption check failed:";
      for (const auto& f : rep.failures) msg += " " + f + ";";
      throw AssumptionError(msg);
    }
  }
  MfgSolution s;
  s.data = MfgData::build(spec, lattice);
  const MarketData& m = *s.data->market;
  const std::size_t n = m.n();
  MeanSystem sys(s.data);
  s.mean = solve_system(sys, options.choice);
  s.x0 = slice(s.mean.forward, 0, n);
  s.xbar = slice(s.mean.forward, n, n);
  s.rbar = slice(s.mean.forward, 2 * n, n);
  s.p0 = slice(s.mean.backward, 0, n);
  s.ybar = slice(s.mean.backward, n, n);
  s.pbar = slice(s.mean.backward, 2 * n, n);
  s.beta_hat = s.mean.aggregates;
  s.price_mfg = NodeField(lattice, n);
  for (std::size_t v = 0; v < lattice->size(); ++v)
    s.price_mfg.vec(v) = -s.ybar.vec(v) + m.exo.lambda.mat(v) * s.beta_hat.vec(v);

  const std::size_t atoms = m.population.size();
  s.dx.resize(atoms);
  s.dy.resize(atoms);
  s.deviation_diagnostics.resize(atoms);
  s.weights.resize(atoms);
  SolverChoice linear = options.choice;
  linear.method = SolveMethod::direct;
  parallel_for(atoms, options.threads, [&](std::size_t a) {
    DeviationSystem dev(s.data, a);
    NodeSolution sol = solve_system(dev, linear);
    s.dx[a] = std::move(sol.forward);
    s.dy[a] = std::move(sol.backward);
    s.deviation_diagnostics[a] = sol.diagnostics;
  });
  for (std::size_t a = 0; a < atoms; ++a) s.weights[a] = m.population.agents[a].weight;
  return s;
}

ModelSpec mfg_maturity_override(const ModelSpec& spec) {
  ModelSpec out = spec;
  out.maturity_mode = true;
  return out;
}

}  // namespace eqprice
