#include "eqprice/coefficient.hpp"

#include <algorithm>

#include "eqprice/errors.hpp"

namespace eqprice {

Coefficient::Coefficient(std::string name, Eigen::Index rows, Eigen::Index cols)
    : name_(std::move(name)), base_(Matrix::Zero(rows, cols)) {}

Coefficient::Coefficient(std::string name, Matrix value) : name_(std::move(name)), base_(std::move(value)) {}

void Coefficient::set_base(Matrix m) { base_ = std::move(m); }

void Coefficient::set_table(std::vector<double> knots, std::vector<Matrix> values) {
  knots_ = std::move(knots);
  values_ = std::move(values);
}

void Coefficient::set_c0_terms(std::vector<Matrix> terms) { c0_terms_ = std::move(terms); }

void Coefficient::set_ci_terms(std::vector<Matrix> terms) { ci_terms_ = std::move(terms); }

namespace {

bool any_nonzero(const std::vector<Matrix>& terms) {
  return std::any_of(terms.begin(), terms.end(), [](const Matrix& m) { return m.size() > 0 && !m.isZero(0.0); });
}

}  // namespace

bool Coefficient::depends_on_c0() const { return any_nonzero(c0_terms_); }

bool Coefficient::depends_on_ci() const { return any_nonzero(ci_terms_); }

CoefficientKind Coefficient::kind() const {
  if (depends_on_c0() || depends_on_ci()) return CoefficientKind::affine;
  if (depends_on_time()) return CoefficientKind::time_dependent;
  return CoefficientKind::constant;
}

void Coefficient::validate(Eigen::Index rows, Eigen::Index cols, Eigen::Index n) const {
  auto fail = [&](const std::string& why) { throw ValidationError("coefficient '" + name_ + "': " + why); };
  auto shape = [&](const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  };
  const std::string want = std::to_string(rows) + "x" + std::to_string(cols);
  if (base_.rows() != rows || base_.cols() != cols) fail("expected shape " + want + ", got " + shape(base_));
  if (!base_.allFinite()) fail("non-finite entry");
  if (knots_.size() != values_.size()) fail("time table needs one value per knot");
  if (!knots_.empty()) {
    for (std::size_t k = 0; k < knots_.size(); ++k) {
      if (values_[k].rows() != rows || values_[k].cols() != cols)
        fail("time table value " + std::to_string(k) + " has shape " + shape(values_[k]) + ", expected " + want);
      if (k > 0 && !(knots_[k] > knots_[k - 1])) fail("time knots must be strictly increasing");
    }
  }
  auto check_terms = [&](const std::vector<Matrix>& terms, const char* label) {
    if (terms.empty()) return;
    if (static_cast<Eigen::Index>(terms.size()) != n)
      fail(std::string(label) + " needs " + std::to_string(n) + " terms, got " + std::to_string(terms.size()));
    for (const auto& m : terms)
      if (m.rows() != rows || m.cols() != cols) fail(std::string(label) + " term has shape " + shape(m) + ", expected " + want);
  };
  check_terms(c0_terms_, "c0");
  check_terms(ci_terms_, "ci");
}

void Coefficient::evaluate_into(double t, const Vector& c0, const Vector& ci, Eigen::Ref<Matrix> out) const {
  out = base_;
  if (!knots_.empty()) {
    if (t <= knots_.front()) {
      out += values_.front();
    } else if (t >= knots_.back()) {
      out += values_.back();
    } else {
      auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
      std::size_t k = static_cast<std::size_t>(it - knots_.begin());
      double w = (t - knots_[k - 1]) / (knots_[k] - knots_[k - 1]);
      out += (1.0 - w) * values_[k - 1] + w * values_[k];
    }
  }
  for (std::size_t j = 0; j < c0_terms_.size(); ++j) out += c0(static_cast<Eigen::Index>(j)) * c0_terms_[j];
  for (std::size_t j = 0; j < ci_terms_.size(); ++j) out += ci(static_cast<Eigen::Index>(j)) * ci_terms_[j];
}

Matrix Coefficient::evaluate(double t, const Vector& c0, const Vector& ci) const {
  Matrix out(base_.rows(), base_.cols());
  evaluate_into(t, c0, ci, out);
  return out;
}

Matrix Coefficient::evaluate(double t, const Vector& c0) const {
  if (depends_on_ci())
    throw ValidationError("coefficient '" + name_ + "' depends on c^i where only (t, c0) is available");
  Matrix out(base_.rows(), base_.cols());
  Vector zero_ci = Vector::Zero(static_cast<Eigen::Index>(ci_terms_.size()));
  evaluate_into(t, c0, zero_ci, out);
  return out;
}

Coefficient Coefficient::scaled(double s) const {
  Coefficient out = *this;
  out.base_ *= s;
  for (auto& m : out.values_) m *= s;
  for (auto& m : out.c0_terms_) m *= s;
  for (auto& m : out.ci_terms_) m *= s;
  return out;
}

}  // namespace eqprice
