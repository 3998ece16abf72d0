#include "eqprice/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "eqprice/errors.hpp"
#include "eqprice/rng.hpp"

namespace eqprice {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::string fmt_vec(const Vector& v) {
  std::ostringstream os;
  os.precision(6);
  os << "[";
  for (Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
  os << "]";
  return os.str();
}

std::string witness(const SamplePoint& p) {
  std::ostringstream os;
  os.precision(6);
  os << "t=" << p.t << ", c0=" << fmt_vec(p.c0) << ", ci=" << fmt_vec(p.ci);
  return os.str();
}

bool symmetric(const Matrix& m) {
  double scale = 1.0 + max_abs(m);
  return max_abs(m - m.transpose()) <= 1e-12 * scale;
}

Vector zero_if_empty(const Vector& v, std::size_t n) { return v.size() == 0 ? Vector::Zero(idx(n)) : v; }

}  // namespace

Vector MajorGradient::gradient(double t, const Vector& x, const Vector& c0) const {
  if (callable) return callable(t, x, c0);
  return c.evaluate(t, c0) * x + h.evaluate(t, c0).col(0);
}

double MajorGradient::value(double t, const Vector& x, const Vector& c0) const {
  if (callable) {
    if (!primitive) throw UnsupportedError("major cost '" + c.name() + "' has a gradient callable but no primitive");
    return primitive(t, x, c0);
  }
  return 0.5 * x.dot(c.evaluate(t, c0) * x) + h.evaluate(t, c0).col(0).dot(x);
}

MinorCoefficients MinorCoefficients::zero(const Dimensions& dims) {
  Index n = idx(dims.n);
  MinorCoefficients m;
  m.l = Coefficient("l", n, 1);
  m.sigma0 = Coefficient("sigma0", n, idx(dims.d0));
  m.sigma = Coefficient("sigma", n, idx(dims.d));
  m.cf = Coefficient("cf", n, n);
  m.hf = Coefficient("hf", n, 1);
  m.cg = Coefficient("cg", n, n);
  m.hg = Coefficient("hg", n, 1);
  return m;
}

MajorCoefficients MajorCoefficients::zero(const Dimensions& dims) {
  Index n = idx(dims.n);
  MajorCoefficients m;
  m.l0 = Coefficient("l0", n, 1);
  m.s0 = Coefficient("s0", n, idx(dims.d0));
  m.dfdx.c = Coefficient("cf0", n, n);
  m.dfdx.h = Coefficient("hf0", n, 1);
  m.dgdx.c = Coefficient("cg0", n, n);
  m.dgdx.h = Coefficient("hg0", n, 1);
  m.chi0 = Vector::Zero(n);
  return m;
}

ModelSpec ModelSpec::zero(const Dimensions& dims) {
  Index n = idx(dims.n);
  ModelSpec s;
  s.dims = dims;
  s.lambda_minor = Coefficient("lambda", Matrix::Identity(n, n));
  s.lambda_major = Coefficient("lambda0", Matrix::Identity(n, n));
  s.minor = MinorCoefficients::zero(dims);
  s.major = MajorCoefficients::zero(dims);
  s.c0_law.initial = Vector::Zero(n);
  s.c0_law.drift = Vector::Zero(n);
  s.c0_law.vol = Matrix::Zero(n, idx(dims.d0));
  s.atoms = {Atom{1.0, Vector::Zero(n), Vector::Zero(n)}};
  return s;
}

namespace {

void validate_minor(const MinorCoefficients& m, const Dimensions& dims, const std::string& prefix) {
  Index n = idx(dims.n);
  auto check = [&](const Coefficient& c, Index r, Index k) {
    try {
      c.validate(r, k, n);
    } catch (const ValidationError& e) {
      throw ValidationError(prefix + e.what());
    }
  };
  check(m.l, n, 1);
  check(m.sigma0, n, idx(dims.d0));
  check(m.sigma, n, idx(dims.d));
  check(m.cf, n, n);
  check(m.hf, n, 1);
  check(m.cg, n, n);
  check(m.hg, n, 1);
}

void require_no_ci(const Coefficient& c) {
  if (c.depends_on_ci()) throw ValidationError("coefficient '" + c.name() + "' may not depend on c^i");
}

}  // namespace

void validate(const ModelSpec& spec) {
  const auto& dims = spec.dims;
  if (dims.n < 1) throw ValidationError("dimension n must be positive");
  if (dims.N < 1) throw ValidationError("dimension N must be positive");
  if (!(spec.delta >= 0.0 && spec.delta < 1.0)) throw ValidationError("constant delta must lie in [0, 1)");
  Index n = idx(dims.n);
  spec.lambda_minor.validate(n, n, n);
  spec.lambda_major.validate(n, n, n);
  require_no_ci(spec.lambda_minor);
  require_no_ci(spec.lambda_major);
  validate_minor(spec.minor, dims, "");
  if (!spec.agents.empty()) {
    if (spec.agents.size() != dims.N)
      throw ValidationError("expected " + std::to_string(dims.N) + " agent bundles, got " +
                            std::to_string(spec.agents.size()));
    for (std::size_t i = 0; i < spec.agents.size(); ++i)
      validate_minor(spec.agents[i], dims, "agent " + std::to_string(i) + ": ");
  }
  const auto& mj = spec.major;
  mj.l0.validate(n, 1, n);
  mj.s0.validate(n, idx(dims.d0), n);
  require_no_ci(mj.l0);
  require_no_ci(mj.s0);
  for (const MajorGradient* g : {&mj.dfdx, &mj.dgdx}) {
    if (g->affine()) {
      g->c.validate(n, n, n);
      g->h.validate(n, 1, n);
      require_no_ci(g->c);
      require_no_ci(g->h);
    }
  }
  if (mj.chi0.size() != n) throw ValidationError("chi0 must have " + std::to_string(n) + " entries");
  const auto& law = spec.c0_law;
  if (law.initial.size() != n) throw ValidationError("c0 law: initial value must have " + std::to_string(n) + " entries");
  if (law.drift.size() != 0 && law.drift.size() != n) throw ValidationError("c0 law: drift has wrong length");
  if (law.vol.size() != 0 && (law.vol.rows() != n || law.vol.cols() != idx(dims.d0)))
    throw ValidationError("c0 law: vol must be n x d0");
  if (spec.atoms.empty()) throw ValidationError("idiosyncratic law has no atoms");
  double total = 0.0;
  for (std::size_t a = 0; a < spec.atoms.size(); ++a) {
    const auto& at = spec.atoms[a];
    if (!(at.weight > 0.0) || !std::isfinite(at.weight))
      throw ValidationError("atom " + std::to_string(a) + ": weight must be positive");
    if (at.xi.size() != n) throw ValidationError("atom " + std::to_string(a) + ": xi must have n entries");
    if (at.ci.size() != n) throw ValidationError("atom " + std::to_string(a) + ": ci must have n entries");
    total += at.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("atom weights must sum to 1");
}

std::vector<SamplePoint> default_sample_points(const ModelSpec& spec, double T) {
  const auto& law = spec.c0_law;
  std::size_t n = spec.dims.n;
  std::vector<SamplePoint> out;
  for (double t : {0.0, 0.5 * T, T}) {
    std::vector<Vector> c0s;
    Vector centre = law.initial;
    if (law.kind == CommonLawKind::gaussian_walk) centre += zero_if_empty(law.drift, n) * t;
    c0s.push_back(centre);
    if (law.kind == CommonLawKind::gaussian_walk && law.vol.size() > 0 && t > 0.0) {
      for (Index j = 0; j < law.vol.cols(); ++j) {
        Vector step = 3.0 * std::sqrt(t) * law.vol.col(j);
        if (step.isZero(0.0)) continue;
        c0s.push_back(centre + step);
        c0s.push_back(centre - step);
      }
    }
    for (const auto& c0 : c0s)
      for (const auto& atom : spec.atoms) out.push_back(SamplePoint{t, c0, atom.ci});
  }
  return out;
}

const ClauseResult* AssumptionReport::find(const std::string& clause) const {
  for (const auto& c : clauses)
    if (c.clause == clause) return &c;
  return nullptr;
}

bool AssumptionReport::passed(const std::string& clause) const {
  const auto* c = find(clause);
  return c && c->status == ClauseStatus::passed;
}

bool AssumptionReport::all_passed() const {
  return std::none_of(clauses.begin(), clauses.end(),
                      [](const ClauseResult& c) { return c.status == ClauseStatus::failed; });
}

void AssumptionReport::add(std::string clause, ClauseStatus status, std::string detail) {
  if (status == ClauseStatus::failed) failures.push_back(clause + ": " + detail);
  clauses.push_back(ClauseResult{std::move(clause), status, std::move(detail)});
}

AssumptionReport check_minor_assumptions(const ModelSpec& spec, const std::optional<Matrix>& candidate_c,
                                         const std::vector<SamplePoint>& samples) {
  validate(spec);
  if (samples.empty()) throw ValidationError("assumption checks need at least one sample point");
  AssumptionReport rep;
  rep.N = spec.dims.N;
  Index n = idx(spec.dims.n);
  std::vector<const MinorCoefficients*> bundles;
  if (spec.homogeneous())
    bundles.push_back(&spec.minor);
  else
    for (const auto& b : spec.agents) bundles.push_back(&b);

  // Minor-A(i)
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::string lambda_fail;
  for (const auto& p : samples) {
    Matrix lam = spec.lambda_minor.evaluate(p.t, p.c0);
    if (!symmetric(lam) && lambda_fail.empty()) lambda_fail = "Lambda is not symmetric at " + witness(p);
    double e0 = sym_min_eig(lam), e1 = sym_max_eig(lam);
    if (e0 <= 0.0 && lambda_fail.empty())
      lambda_fail = "Lambda has eigenvalue " + std::to_string(e0) + " <= 0 at " + witness(p);
    lo = std::min(lo, e0);
    hi = std::max(hi, e1);
  }
  rep.lambda_lower = lo;
  rep.lambda_upper = hi;
  if (lambda_fail.empty())
    rep.add("Minor-A(i)", ClauseStatus::passed, "Lambda eigenvalues in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  else
    rep.add("Minor-A(i)", ClauseStatus::failed, lambda_fail);

  // Minor-A(iv). In maturity mode the terminal costs are linear and c^g plays no role.
  const bool terminal_active = !spec.maturity_mode;
  double gf = std::numeric_limits<double>::infinity(), gg = gf;
  std::string conv_fail;
  Matrix avg = Matrix::Zero(n, n);
  std::size_t count = 0;
  for (const auto* b : bundles) {
    for (const auto& p : samples) {
      Matrix cf = b->cf.evaluate(p.t, p.c0, p.ci);
      if (conv_fail.empty() && !symmetric(cf)) conv_fail = "c^f is not symmetric at " + witness(p);
      double ef = sym_min_eig(cf);
      if (ef < gf) {
        gf = ef;
        if (ef <= 0.0 && conv_fail.empty()) conv_fail = "c^f has eigenvalue " + std::to_string(ef) + " <= 0 at " + witness(p);
      }
      if (!terminal_active) continue;
      Matrix cg = b->cg.evaluate(p.t, p.c0, p.ci);
      if (conv_fail.empty() && !symmetric(cg)) conv_fail = "c^g is not symmetric at " + witness(p);
      double eg = sym_min_eig(cg);
      if (eg < gg) {
        gg = eg;
        if (eg <= 0.0 && conv_fail.empty()) conv_fail = "c^g has eigenvalue " + std::to_string(eg) + " <= 0 at " + witness(p);
      }
      avg += cg;
      ++count;
    }
  }
  rep.gamma_f = gf;
  if (terminal_active) rep.gamma_g = gg;
  std::string gdesc = terminal_active ? ", gamma_g=" + std::to_string(gg) : ", terminal cost linear (maturity mode)";
  if (conv_fail.empty())
    rep.add("Minor-A(iv)", ClauseStatus::passed, "gamma_f=" + std::to_string(gf) + gdesc);
  else
    rep.add("Minor-A(iv)", ClauseStatus::failed, conv_fail);

  // Minor-B
  if (!terminal_active) {
    rep.a_const = 0.0;
    rep.add("Minor-B", ClauseStatus::passed, "not applicable in maturity mode");
    return rep;
  }
  Matrix cand = candidate_c ? *candidate_c : Matrix(avg / static_cast<double>(count));
  if (cand.rows() != n || cand.cols() != n) throw ValidationError("candidate_c must be n x n");
  double dist = 0.0;
  SamplePoint worst = samples.front();
  for (const auto* b : bundles) {
    for (const auto& p : samples) {
      double d = op_norm(cand - b->cg.evaluate(p.t, p.c0, p.ci));
      if (d > dist) {
        dist = d;
        worst = p;
      }
    }
  }
  double a = spec.delta / (1.0 - spec.delta) * dist;
  rep.a_const = a;
  if (a < gg)
    rep.add("Minor-B", ClauseStatus::passed, "a=" + std::to_string(a) + " < gamma_g=" + std::to_string(gg));
  else
    rep.add("Minor-B", ClauseStatus::failed,
            "a=" + std::to_string(a) + " >= gamma_g=" + std::to_string(gg) + " (largest |c - c^g| at " + witness(worst) + ")");
  return rep;
}

namespace {

struct SecantResult {
  double gamma = std::numeric_limits<double>::infinity();
  double lipschitz = 0.0;
  bool finite = true;
  std::string witness;
};

SecantResult secant_probe(const MajorGradient& g, const std::vector<SamplePoint>& samples, std::size_t n,
                          const SecantOptions& opt, std::uint64_t tag) {
  SecantResult res;
  StreamRng rng = StreamRng::derive(opt.seed, tag);
  for (const auto& p : samples) {
    for (std::size_t k = 0; k < opt.pairs; ++k) {
      Vector x(idx(n)), y(idx(n));
      for (Index i = 0; i < x.size(); ++i) {
        x(i) = opt.box_lo + (opt.box_hi - opt.box_lo) * rng.uniform();
        y(i) = opt.box_lo + (opt.box_hi - opt.box_lo) * rng.uniform();
      }
      Vector dx = y - x;
      double nrm2 = dx.squaredNorm();
      if (nrm2 == 0.0) continue;
      Vector dg = g.gradient(p.t, y, p.c0) - g.gradient(p.t, x, p.c0);
      if (!dg.allFinite()) {
        res.finite = false;
        continue;
      }
      double ratio = dg.dot(dx) / nrm2;
      if (ratio < res.gamma) {
        res.gamma = ratio;
        res.witness = "x=" + fmt_vec(x) + ", x'=" + fmt_vec(y) + " at " + witness(p);
      }
      res.lipschitz = std::max(res.lipschitz, dg.norm() / std::sqrt(nrm2));
    }
  }
  return res;
}

void check_major_convexity(AssumptionReport& rep, const MajorGradient& g, const std::vector<SamplePoint>& samples,
                           std::size_t n, const SecantOptions& opt, const char* label, std::optional<double>& gamma,
                           double& lipschitz, bool& ok, std::string& fail, bool& inconclusive, std::uint64_t tag) {
  if (g.affine()) {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& p : samples) {
      Matrix c = g.c.evaluate(p.t, p.c0);
      double e = sym_min_eig(c);
      if (!symmetric(c)) {
        ok = false;
        if (fail.empty()) fail = std::string(label) + " Hessian is not symmetric at " + witness(p);
      }
      if (e < lo) {
        lo = e;
        if (e <= 0.0 && fail.empty())
          fail = std::string(label) + " Hessian has eigenvalue " + std::to_string(e) + " <= 0 at " + witness(p);
      }
      lipschitz = std::max(lipschitz, op_norm(c));
    }
    gamma = lo;
    if (lo <= 0.0) ok = false;
    return;
  }
  SecantResult s = secant_probe(g, samples, n, opt, tag);
  lipschitz = std::max(lipschitz, s.lipschitz);
  if (!s.finite || !std::isfinite(s.gamma)) {
    inconclusive = true;
    return;
  }
  gamma = s.gamma;
  if (s.gamma <= 0.0) {
    ok = false;
    if (fail.empty())
      fail = std::string(label) + " secant estimate " + std::to_string(s.gamma) + " <= 0 at " + s.witness;
  }
  (void)rep;
}

}  // namespace

AssumptionReport check_major_assumptions(const ModelSpec& spec, const std::vector<SamplePoint>& samples,
                                         const SecantOptions& secant) {
  validate(spec);
  if (samples.empty()) throw ValidationError("assumption checks need at least one sample point");
  AssumptionReport rep;
  rep.N = spec.dims.N;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::string fail;
  for (const auto& p : samples) {
    Matrix m = spec.lambda_major.evaluate(p.t, p.c0) + 2.0 * spec.lambda_minor.evaluate(p.t, p.c0);
    if (!symmetric(m) && fail.empty()) fail = "Lambda0 + 2 Lambda is not symmetric at " + witness(p);
    double e0 = sym_min_eig(m), e1 = sym_max_eig(m);
    if (e0 <= 0.0 && fail.empty())
      fail = "Lambda0 + 2 Lambda has eigenvalue " + std::to_string(e0) + " <= 0 at " + witness(p);
    lo = std::min(lo, e0);
    hi = std::max(hi, e1);
  }
  rep.major_lower = lo;
  rep.major_upper = hi;
  if (fail.empty())
    rep.add("Major(i)", ClauseStatus::passed,
            "Lambda0 + 2 Lambda eigenvalues in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  else
    rep.add("Major(i)", ClauseStatus::failed, fail);

  double lip = 0.0;
  bool ok = true, inconclusive = false;
  std::string conv_fail;
  check_major_convexity(rep, spec.major.dfdx, samples, spec.dims.n, secant, "f0", rep.gamma0_f, lip, ok, conv_fail,
                        inconclusive, 1);
  if (!spec.maturity_mode)
    check_major_convexity(rep, spec.major.dgdx, samples, spec.dims.n, secant, "g0", rep.gamma0_g, lip, ok, conv_fail,
                          inconclusive, 2);
  rep.lipschitz0 = lip;
  if (std::isfinite(lip))
    rep.add("Major(iv)", ClauseStatus::passed, "gradient Lipschitz estimate " + std::to_string(lip));
  else
    rep.add("Major(iv)", ClauseStatus::failed, "gradient Lipschitz estimate is not finite");
  if (!ok)
    rep.add("Major(v)", ClauseStatus::failed, conv_fail);
  else if (inconclusive)
    rep.add("Major(v)", ClauseStatus::inconclusive, "secant sampling produced no usable estimate");
  else
    rep.add("Major(v)", ClauseStatus::passed,
            "gamma0_f=" + std::to_string(rep.gamma0_f.value_or(0.0)) +
                ", gamma0_g=" + std::to_string(rep.gamma0_g.value_or(0.0)));
  return rep;
}

AssumptionReport check_assumptions(const ModelSpec& spec, const std::vector<SamplePoint>& samples,
                                   const std::optional<Matrix>& candidate_c, const SecantOptions& secant) {
  AssumptionReport rep = check_minor_assumptions(spec, candidate_c, samples);
  AssumptionReport major = check_major_assumptions(spec, samples, secant);
  for (auto& c : major.clauses) rep.clauses.push_back(c);
  for (auto& f : major.failures) rep.failures.push_back(f);
  rep.gamma0_f = major.gamma0_f;
  rep.gamma0_g = major.gamma0_g;
  rep.major_lower = major.major_lower;
  rep.major_upper = major.major_upper;
  rep.lipschitz0 = major.lipschitz0;
  double N = static_cast<double>(spec.dims.N);
  if (rep.gamma0_f && rep.gamma_f) rep.beta1 = std::min(*rep.gamma0_f / N, *rep.gamma_f);
  if (rep.gamma0_g && rep.gamma_g && rep.a_const) rep.mu1 = std::min(*rep.gamma0_g / N, *rep.gamma_g - *rep.a_const);
  return rep;
}

namespace {

MajorGradient scale_gradient(const MajorGradient& g, double N) {
  MajorGradient out;
  if (g.affine()) {
    out.c = g.c.scaled(1.0 / N);
    out.h = g.h;
    return out;
  }
  out.c = g.c;
  out.h = g.h;
  auto grad = g.callable;
  out.callable = [grad, N](double t, const Vector& x, const Vector& c0) { return grad(t, x / N, c0); };
  if (g.primitive) {
    auto prim = g.primitive;
    out.primitive = [prim, N](double t, const Vector& x, const Vector& c0) { return N * prim(t, x / N, c0); };
  }
  return out;
}

}  // namespace

ScaledMajor::ScaledMajor(const MajorCoefficients& major, std::size_t N) : N_(N) {
  if (N < 1) throw ValidationError("scale_major needs N >= 1");
  double s = static_cast<double>(N);
  major_.l0 = major.l0.scaled(s);
  major_.s0 = major.s0.scaled(s);
  major_.dfdx = scale_gradient(major.dfdx, s);
  major_.dgdx = scale_gradient(major.dgdx, s);
  major_.chi0 = major.chi0 * s;
}

Vector ScaledMajor::l0(double t, const Vector& c0) const { return major_.l0.evaluate(t, c0).col(0); }

Matrix ScaledMajor::s0(double t, const Vector& c0) const { return major_.s0.evaluate(t, c0); }

Vector ScaledMajor::dfdx(double t, const Vector& X0, const Vector& c0) const {
  return major_.dfdx.gradient(t, X0, c0);
}

Vector ScaledMajor::dgdx(const Vector& X0, const Vector& c0, double T) const {
  return major_.dgdx.gradient(T, X0, c0);
}

double ScaledMajor::f0(double t, const Vector& X0, const Vector& c0) const { return major_.dfdx.value(t, X0, c0); }

double ScaledMajor::g0(const Vector& X0, const Vector& c0, double T) const { return major_.dgdx.value(T, X0, c0); }

Vector ScaledMajor::chi0() const { return major_.chi0; }

ScaledMajor scale_major(const ModelSpec& spec, std::size_t N) { return ScaledMajor(spec.major, N); }

}  // namespace eqprice
