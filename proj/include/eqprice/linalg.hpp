#pragma once

#include <Eigen/Dense>

namespace eqprice {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Smallest eigenvalue of the symmetric part of `m`.
double sym_min_eig(const Matrix& m);

/// Largest eigenvalue of the symmetric part of `m`.
double sym_max_eig(const Matrix& m);

/// Operator 2-norm (largest singular value).
double op_norm(const Matrix& m);

/// Max-abs entry; 0 for empty input.
double max_abs(const Eigen::Ref<const Matrix>& m);

}  // namespace eqprice
