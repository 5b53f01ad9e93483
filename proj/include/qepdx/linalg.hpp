#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "qepdx/errors.hpp"

namespace qepdx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

inline constexpr double kRetryJitter = 1e-6;

struct CholeskyResult {
  Matrix factor;         // lower triangular
  double jitter = 0.0;   // diagonal shift that was needed (0 on first success)
};

/// Lower Cholesky factor of a symmetric matrix. On failure retries once with
/// kRetryJitter times the mean diagonal added, then throws NumericalFailure.
inline CholeskyResult cholesky(const Matrix& a, const std::string& what = "matrix") {
  if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: " + what + " not square");
  if (!a.allFinite()) throw NumericalFailure("cholesky: " + what + " has non-finite entries");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
    return {llt.matrixL().toDenseMatrix(), 0.0};
  }
  const double jitter = kRetryJitter * std::abs(a.diagonal().mean());
  Matrix shifted = a;
  shifted.diagonal().array() += jitter;
  llt.compute(shifted);
  if (llt.info() != Eigen::Success) {
    throw NumericalFailure("cholesky: " + what + " is not positive definite after jitter retry");
  }
  return {llt.matrixL().toDenseMatrix(), jitter};
}

inline double log_det_from_factor(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

/// L⁻¹ B
inline Matrix solve_lower(const Matrix& lower, const Matrix& b) {
  return lower.triangularView<Eigen::Lower>().solve(b);
}

/// L⁻ᵀ B
inline Matrix solve_lower_t(const Matrix& lower, const Matrix& b) {
  return lower.transpose().triangularView<Eigen::Upper>().solve(b);
}

/// (L Lᵀ)⁻¹ B
inline Matrix solve_factor(const Matrix& lower, const Matrix& b) {
  return solve_lower_t(lower, solve_lower(lower, b));
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace linalg
}  // namespace qepdx
