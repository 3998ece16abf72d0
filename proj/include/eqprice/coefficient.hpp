#pragma once

#include <string>
#include <vector>

#include "eqprice/linalg.hpp"

namespace eqprice {

enum class CoefficientKind { constant, time_dependent, affine };

/// Coefficient evaluated at (t, c0, ci):
///   base + table(t) + sum_j c0[j] * c0_terms[j] + sum_j ci[j] * ci_terms[j]
/// where table is piecewise linear in t (clamped outside the knots).
class Coefficient {
 public:
  Coefficient() = default;
  /// Zero coefficient of the given shape.
  Coefficient(std::string name, Eigen::Index rows, Eigen::Index cols);
  /// Constant coefficient.
  Coefficient(std::string name, Matrix value);

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  Eigen::Index rows() const { return base_.rows(); }
  Eigen::Index cols() const { return base_.cols(); }

  const Matrix& base() const { return base_; }
  void set_base(Matrix m);
  void set_table(std::vector<double> knots, std::vector<Matrix> values);
  void set_c0_terms(std::vector<Matrix> terms);
  void set_ci_terms(std::vector<Matrix> terms);

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<Matrix>& table_values() const { return values_; }
  const std::vector<Matrix>& c0_terms() const { return c0_terms_; }
  const std::vector<Matrix>& ci_terms() const { return ci_terms_; }

  bool depends_on_time() const { return !knots_.empty(); }
  bool depends_on_c0() const;
  bool depends_on_ci() const;
  CoefficientKind kind() const;

  /// Throws ValidationError unless shape is rows x cols and the affine term
  /// counts match the exogenous dimension n.
  void validate(Eigen::Index rows, Eigen::Index cols, Eigen::Index n) const;

  Matrix evaluate(double t, const Vector& c0, const Vector& ci) const;
  void evaluate_into(double t, const Vector& c0, const Vector& ci, Eigen::Ref<Matrix> out) const;
  /// For coefficients without ci dependence.
  Matrix evaluate(double t, const Vector& c0) const;

  /// Every component multiplied by s.
  Coefficient scaled(double s) const;

 private:
  std::string name_;
  Matrix base_;
  std::vector<double> knots_;
  std::vector<Matrix> values_;
  std::vector<Matrix> c0_terms_;
  std::vector<Matrix> ci_terms_;
};

}  // namespace eqprice
