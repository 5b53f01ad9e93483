#pragma once

// Small random layer fixtures shared by the model tests.

#include <random>

#include "qepdx/shallow.hpp"

namespace qepdx::testing {

inline Matrix uniform(long r, long c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Matrix random_lower(long m, std::mt19937_64& rng, double diag_lo, double diag_hi, double off) {
  Matrix l = uniform(m, m, rng, -off, off).triangularView<Eigen::Lower>();
  l.diagonal() = uniform(m, 1, rng, diag_lo, diag_hi);
  return l;
}

inline LayerSpec layer_spec(long q_in, long d_out, long m, double q, KernelFamily f = KernelFamily::se_ard) {
  LayerSpec s;
  s.in_dim = q_in;
  s.out_dim = d_out;
  s.num_inducing = m;
  s.q = q;
  s.beta = 4.0;
  s.kernel.family = f;
  s.kernel.alpha = 0.8;
  s.kernel.gamma = Vector::LinSpaced(q_in, 0.7, 1.6);
  return s;
}

inline VariationalState random_state(const LayerSpec& s, long n, std::mt19937_64& rng) {
  VariationalState st;
  st.inducing = uniform(s.num_inducing, s.in_dim, rng, -1.5, 1.5);
  st.u_mean = uniform(s.num_inducing, s.out_dim, rng);
  for (long d = 0; d < s.out_dim; ++d) st.u_cov_chol.push_back(random_lower(s.num_inducing, rng, 0.2, 0.6, 0.2));
  st.x_mean = uniform(n, s.in_dim, rng);
  st.x_cov_diag = uniform(n, s.in_dim, rng, 0.05, 0.3);
  return st;
}

inline Matrix inv(const Matrix& a) { return a.fullPivLu().inverse(); }

// Gaussian SVGP-style bound written with explicit inverses, including the
// trace correction tr(MᵀK⁻¹(Ψ2 - Ψ1ᵀΨ1)K⁻¹M).
struct GaussianTerms {
  double h, kl_u, kl_x;
};

inline GaussianTerms gaussian_path(const Matrix& y, const VariationalState& st, const LayerSpec& s, const PsiStats& psi,
                                   const Matrix* y_var = nullptr) {
  const long n = y.rows(), d = y.cols(), m = s.num_inducing;
  const Matrix k = gram(s.kernel, st.inducing);
  const Matrix ki = inv(k);
  const Matrix a = ki * st.u_mean;
  double inner = (y - psi.psi1 * a).squaredNorm() + (a.transpose() * (psi.psi2 - psi.psi1.transpose() * psi.psi1) * a).trace() +
                 d * (psi.psi0 - (ki * psi.psi2).trace());
  double kl_u = 0.0;
  for (long j = 0; j < d; ++j) {
    const Matrix sig = st.u_cov_chol[j] * st.u_cov_chol[j].transpose();
    inner += (ki * sig * ki * psi.psi2).trace();
    kl_u += 0.5 * ((ki * sig).trace() + st.u_mean.col(j).dot(ki * st.u_mean.col(j)) - m +
                   std::log(k.determinant()) - std::log(sig.determinant()));
  }
  if (y_var) inner += y_var->sum();
  const double h = 0.5 * n * d * std::log(s.beta) - 0.5 * s.beta * inner;
  const Matrix& mu = st.x_mean;
  const Matrix& sx = st.x_cov_diag;
  const double kl_x = 0.5 * (sx.sum() + mu.squaredNorm() - static_cast<double>(sx.size()) - sx.array().log().sum());
  return {h, kl_u, kl_x};
}

}  // namespace qepdx::testing
