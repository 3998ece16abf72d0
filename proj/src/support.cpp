#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "eqprice/linalg.hpp"
#include "eqprice/rng.hpp"

namespace eqprice {

double sym_min_eig(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Matrix s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double sym_max_eig(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Matrix s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double op_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double max_abs(const Eigen::Ref<const Matrix>& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double StreamRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

}  // namespace eqprice
