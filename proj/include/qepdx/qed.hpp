#pragma once

// Multivariate q-exponential distribution q-ED_N(mu, C):
//   p(u) = (q/2) (2π)^{-N/2} |C|^{-1/2} r^{(q/2-1)N/2} exp(-r^{q/2}/2),
//   r = (u - mu)ᵀ C⁻¹ (u - mu).
// q = 2 is the Gaussian. C is always carried as its lower Cholesky factor.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "qepdx/errors.hpp"
#include "qepdx/linalg.hpp"
#include "qepdx/special.hpp"

namespace qepdx {

/// Floor applied to quadratic forms inside every bound evaluation.
inline constexpr double kRadiusFloor = 1e-12;

class QedParams {
 public:
  QedParams(Vector mu, Matrix scale_chol, double q)
      : mu_(std::move(mu)), scale_chol_(std::move(scale_chol)), q_(q) {
    if (!(q_ > 0.0) || !std::isfinite(q_)) throw std::invalid_argument("QedParams: q must be > 0");
    if (scale_chol_.rows() != scale_chol_.cols() || scale_chol_.rows() != mu_.size()) {
      throw std::invalid_argument("QedParams: mu and scale factor dimensions disagree");
    }
    if (mu_.size() == 0) throw std::invalid_argument("QedParams: empty distribution");
    if (!(scale_chol_.diagonal().array() > 0.0).all()) {
      throw std::invalid_argument("QedParams: scale factor diagonal must be positive");
    }
    scale_chol_ = scale_chol_.triangularView<Eigen::Lower>();
  }

  /// Factorizes a symmetric positive definite scale matrix.
  static QedParams from_scale(Vector mu, const Matrix& scale, double q) {
    auto chol = linalg::cholesky(scale, "scale matrix");
    return QedParams(std::move(mu), std::move(chol.factor), q);
  }

  const Vector& mu() const { return mu_; }
  const Matrix& scale_chol() const { return scale_chol_; }
  Matrix scale() const { return scale_chol_ * scale_chol_.transpose(); }
  double q() const { return q_; }
  Eigen::Index dim() const { return mu_.size(); }
  double log_det_scale() const { return linalg::log_det_from_factor(scale_chol_); }

 private:
  Vector mu_;
  Matrix scale_chol_;
  double q_;
};

/// One draw of the stochastic representation u = mu + R L S.
struct RadialSample {
  double r_pow = 0.0;  // R, with R^q ~ χ²(N)
  Vector direction;    // S, uniform on the unit sphere
};

struct PhiArgs {
  double r = 0.0;
  double log_det_sigma = 0.0;
  long n_rows = 1;
  long n_cols = 1;
  double q = 2.0;
};

/// Mahalanobis quadratic form (u - mu)ᵀ C⁻¹ (u - mu) via one triangular solve.
inline double quadratic_form(const Vector& u, const QedParams& params) {
  const Vector w = linalg::solve_lower(params.scale_chol(), u - params.mu());
  return w.squaredNorm();
}

inline double log_density(const Vector& u, const QedParams& params) {
  const auto n = params.dim();
  if (u.size() != n) throw std::invalid_argument("log_density: dimension mismatch");
  if (!u.allFinite()) throw std::invalid_argument("log_density: non-finite input");
  const double q = params.q();
  const double r = quadratic_form(u, params);
  const double base = std::log(q / 2.0) - 0.5 * n * std::log(2.0 * std::numbers::pi) -
                      0.5 * params.log_det_scale();
  const double radial_coef = (q / 2.0 - 1.0) * n / 2.0;
  if (r == 0.0) {
    if (q < 2.0) throw SingularDensity("log_density: evaluated at the mode with q < 2");
    if (q > 2.0) return -std::numeric_limits<double>::infinity();
    return base;
  }
  return base + radial_coef * std::log(r) - 0.5 * std::pow(r, q / 2.0);
}

/// Draws (R, S) for dimension n. R = W^{1/q} with W = ‖z‖² ~ χ²(n) and S = z/‖z‖
/// for z ~ N(0, I); W and S are independent.
template <class Rng>
RadialSample draw_radial(Eigen::Index n, double q, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  double w = 0.0;
  do {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    w = z.squaredNorm();
  } while (w == 0.0);
  RadialSample s;
  s.r_pow = std::pow(w, 1.0 / q);
  s.direction = z / std::sqrt(w);
  return s;
}

/// Unit-scale draw R·S of q-ED_n(0, I). At q = 2 returns the Gaussian vector z itself.
template <class Rng>
Vector draw_standard(Eigen::Index n, double q, Rng& rng) {
  if (q == 2.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    return z;
  }
  const RadialSample s = draw_radial(n, q, rng);
  return s.r_pow * s.direction;
}

/// count × N matrix of i.i.d. rows from q-ED(mu, C).
template <class Rng>
Matrix sample(const QedParams& params, long count, Rng& rng) {
  if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
  const auto n = params.dim();
  Matrix out(count, n);
  for (long i = 0; i < count; ++i) {
    const Vector e = draw_standard(n, params.q(), rng);
    out.row(i) = (params.mu() + params.scale_chol() * e).transpose();
  }
  return out;
}

/// Cov(u) = covariance_scaling(N, q) · C for u ~ q-ED_N(mu, C).
inline double covariance_scaling(long n, double q) {
  if (n < 1 || !(q > 0.0)) throw std::invalid_argument("covariance_scaling: need n >= 1, q > 0");
  if (q == 2.0) return 1.0;
  const double h = 0.5 * static_cast<double>(n);
  return std::exp((2.0 / q) * std::log(2.0) + special::log_gamma(h + 2.0 / q) -
                  std::log(static_cast<double>(n)) - special::log_gamma(h));
}

/// Conditions the joint on u[observed_idx] = observed_vals; returns the law of the
/// remaining coordinates (in increasing index order) with the same q.
inline QedParams condition(const QedParams& joint, std::span<const long> observed_idx,
                           const Vector& observed_vals) {
  const long n = static_cast<long>(joint.dim());
  if (observed_idx.empty() || static_cast<long>(observed_idx.size()) >= n) {
    throw std::invalid_argument("condition: observed set must be a strict nonempty subset");
  }
  if (static_cast<long>(observed_idx.size()) != observed_vals.size()) {
    throw std::invalid_argument("condition: observed values size mismatch");
  }
  std::vector<char> is_obs(n, 0);
  for (long i : observed_idx) {
    if (i < 0 || i >= n || is_obs[i]) throw std::invalid_argument("condition: bad observed index");
    is_obs[i] = 1;
  }
  std::vector<long> free;
  for (long i = 0; i < n; ++i)
    if (!is_obs[i]) free.push_back(i);

  const Matrix c = joint.scale();
  const long k = static_cast<long>(observed_idx.size());
  const long m = static_cast<long>(free.size());
  Matrix c11(k, k), c21(m, k), c22(m, m);
  Vector mu1(k), mu2(m);
  for (long a = 0; a < k; ++a) {
    mu1[a] = joint.mu()[observed_idx[a]];
    for (long b = 0; b < k; ++b) c11(a, b) = c(observed_idx[a], observed_idx[b]);
  }
  for (long a = 0; a < m; ++a) {
    mu2[a] = joint.mu()[free[a]];
    for (long b = 0; b < k; ++b) c21(a, b) = c(free[a], observed_idx[b]);
    for (long b = 0; b < m; ++b) c22(a, b) = c(free[a], free[b]);
  }
  const Matrix l11 = linalg::cholesky(c11, "observed block").factor;
  const Matrix w = linalg::solve_lower(l11, c21.transpose());  // L11⁻¹ C12
  const Vector cond_mu = mu2 + w.transpose() * linalg::solve_lower(l11, observed_vals - mu1);
  const Matrix cond_c = linalg::symmetrize(c22 - w.transpose() * w);
  return QedParams::from_scale(cond_mu, cond_c, joint.q());
}

/// φ(r; Σ, D) = -(D/2) log|Σ| + (N D / 2)(q/2 - 1) log r - r^{q/2} / 2.
inline double phi(const PhiArgs& a) {
  if (!(a.r > 0.0)) throw std::invalid_argument("phi: r must be > 0");
  const double nd = static_cast<double>(a.n_rows) * static_cast<double>(a.n_cols);
  return -0.5 * static_cast<double>(a.n_cols) * a.log_det_sigma +
         0.5 * nd * (a.q / 2.0 - 1.0) * std::log(a.r) - 0.5 * std::pow(a.r, a.q / 2.0);
}

/// dφ/dr
inline double phi_dr(const PhiArgs& a) {
  const double nd = static_cast<double>(a.n_rows) * static_cast<double>(a.n_cols);
  return 0.5 * nd * (a.q / 2.0 - 1.0) / a.r - 0.25 * a.q * std::pow(a.r, a.q / 2.0 - 1.0);
}

/// Entropy of a block-diagonal q-ED over n·d coordinates with the χ² radial-law
/// constants kept and the (2π) normalization dropped:
///   ½ Σ log|S_b| + (k/2)(1 - 2/q) H(χ²(k)) + k/2,   k = n·d.
inline double entropy_lower(std::span<const double> block_log_dets, long n, long d, double q) {
  if (n * d < 1) throw std::invalid_argument("entropy_lower: n*d must be >= 1");
  double s = 0.0;
  for (double v : block_log_dets) s += v;
  const double k = static_cast<double>(n) * static_cast<double>(d);
  const double radial = (q == 2.0) ? 0.0 : 0.5 * k * (1.0 - 2.0 / q) * special::chi_square_entropy(k);
  return 0.5 * s + radial + 0.5 * k;
}

}  // namespace qepdx
