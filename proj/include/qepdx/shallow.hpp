#pragma once

// One Q-EP layer: exact regression, the PCA-style maximum-likelihood latent
// initialization, and the sparse variational bound
//   ELBO = h* - KL*_U - KL*_X.

#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qepdx/kernels.hpp"
#include "qepdx/optim.hpp"

namespace qepdx {

struct LayerSpec {
  long in_dim = 1;   // Q
  long out_dim = 1;  // D
  KernelSpec kernel;
  double beta = 1.0;  // noise precision
  double q = 2.0;
  long num_inducing = 1;

  void validate() const {
    if (in_dim < 1 || out_dim < 1 || num_inducing < 1) throw std::invalid_argument("LayerSpec: dimensions must be >= 1");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("LayerSpec: beta must be > 0");
    if (!(q > 0.0 && q <= 2.0)) throw std::invalid_argument("LayerSpec: q must lie in (0, 2]");
    kernel.validate();
    if (kernel.gamma.size() != in_dim) throw std::invalid_argument("LayerSpec: gamma length must equal in_dim");
  }
};

struct VariationalState {
  Matrix inducing;                  // M×Q
  Matrix u_mean;                    // M×D
  std::vector<Matrix> u_cov_chol;   // D lower factors, M×M
  Matrix x_mean;                    // N×Q (empty when the input is observed)
  Matrix x_cov_diag;                // N×Q

  void validate(const LayerSpec& spec) const {
    const long m = spec.num_inducing;
    if (inducing.rows() != m || inducing.cols() != spec.in_dim) throw std::invalid_argument("VariationalState: inducing shape");
    if (u_mean.rows() != m || u_mean.cols() != spec.out_dim) throw std::invalid_argument("VariationalState: u_mean shape");
    if (static_cast<long>(u_cov_chol.size()) != spec.out_dim) throw std::invalid_argument("VariationalState: need one factor per output");
    for (const auto& c : u_cov_chol) {
      if (c.rows() != m || c.cols() != m) throw std::invalid_argument("VariationalState: factor shape");
      if (!(c.diagonal().array() > 0.0).all()) throw std::invalid_argument("VariationalState: factor diagonal must be > 0");
    }
    if (x_mean.size() > 0) {
      if (x_mean.cols() != spec.in_dim || x_cov_diag.rows() != x_mean.rows() || x_cov_diag.cols() != x_mean.cols()) {
        throw std::invalid_argument("VariationalState: x_mean / x_cov_diag shape");
      }
      if (!(x_cov_diag.array() > 0.0).all()) throw std::invalid_argument("VariationalState: x_cov_diag must be > 0");
    }
  }
};

struct ElboBreakdown {
  double h_star = 0.0;
  double kl_u_star = 0.0;
  double kl_x_star = 0.0;
  double total = 0.0;
  double r_y = 0.0;
  long clamped = 0;  // number of radii floored at kRadiusFloor
};

namespace bound {

struct LayerVars {
  kern::KernelVars kernel;
  ad::Var beta;  // 1×1
  ad::Var inducing;
  ad::Var u_mean;
  std::vector<ad::Var> u_chol;
  double q = 2.0;
};

inline LayerVars constants(ad::Tape& t, const LayerSpec& spec, const VariationalState& st) {
  spec.validate();
  st.validate(spec);
  LayerVars v{kern::constants(t, spec.kernel), t.constant(spec.beta), t.constant(st.inducing),
              t.constant(st.u_mean), {}, spec.q};
  for (const auto& c : st.u_cov_chol) v.u_chol.push_back(t.constant(c));
  return v;
}

/// φ(r; Σ, D) with log|Σ| given as a tape node.
inline ad::Var phi(const ad::Var& r, const ad::Var& log_det_sigma, long n_rows, long n_cols, double q) {
  const double nd = static_cast<double>(n_rows) * static_cast<double>(n_cols);
  ad::Var out = -0.5 * static_cast<double>(n_cols) * log_det_sigma - 0.5 * ad::pow(r, q / 2.0);
  if (q != 2.0) out = out + 0.5 * nd * (q / 2.0 - 1.0) * ad::log(r);
  return out;
}

struct HTerm {
  ad::Var h;
  double r = 0.0;
  bool clamped = false;
};

/// h* = φ(r; β⁻¹I_N, D) with
///   r = β[‖T - Ψ1A‖² + tr(Aᵀ(Ψ2 - Ψ1ᵀΨ1)A) + D(ψ0 - tr(K⁻¹Ψ2)) + Σ_d tr(K⁻¹Σ_dK⁻¹Ψ2) + tr(S_T)],
/// A = K_MM⁻¹M; the last term is present only for a latent target with variances S_T.
inline HTerm h_star(const ad::Var& target, const ad::Var* target_var, const kern::PsiVars& psi,
                    const LayerVars& lv, const ad::Var& kmm_chol) {
  const long n = target.rows(), d = target.cols();
  if (psi.psi1.rows() != n) throw std::invalid_argument("h_star: psi1 rows must match targets");
  if (lv.u_mean.cols() != d) throw std::invalid_argument("h_star: u_mean columns must match targets");
  const ad::Var& l = kmm_chol;
  const ad::Var a = ad::solve_lower_t(l, ad::solve_lower(l, lv.u_mean));
  const ad::Var fhat = ad::matmul(psi.psi1, a);
  ad::Var inner = ad::squared_norm(target - fhat);
  inner = inner + ad::sum(ad::cmul(a, ad::matmul(psi.psi2, a))) - ad::squared_norm(fhat);
  const ad::Var kinv_psi2 = ad::trace(ad::solve_lower(l, ad::transpose(ad::solve_lower(l, psi.psi2))));
  inner = inner + static_cast<double>(d) * (psi.psi0 - kinv_psi2);
  for (const auto& c : lv.u_chol) {
    const ad::Var w = ad::solve_lower_t(l, ad::solve_lower(l, c));
    inner = inner + ad::sum(ad::cmul(w, ad::matmul(psi.psi2, w)));
  }
  if (target_var) inner = inner + ad::sum(*target_var);
  const ad::Var raw_r = ad::scale_by(inner, lv.beta);
  HTerm out;
  out.clamped = !(raw_r.scalar() >= kRadiusFloor);
  const ad::Var r = ad::clamp_min(raw_r, kRadiusFloor);
  out.r = r.scalar();
  out.h = phi(r, -static_cast<double>(n) * ad::log(lv.beta), n, d, lv.q);
  return out;
}

/// -KL*_U = ½Σ_d log|Σ_d| + χ² constants + φ(tr(MᵀK⁻¹M) + Σ_d tr(Σ_dK⁻¹); K_MM, D).
inline ad::Var neg_kl_u(const LayerVars& lv, const ad::Var& kmm_chol) {
  ad::Tape& t = *lv.u_mean.tape();
  const long m = lv.u_mean.rows(), d = lv.u_mean.cols();
  ad::Var r = ad::squared_norm(ad::solve_lower(kmm_chol, lv.u_mean));
  ad::Var logdets = t.constant(0.0);
  for (const auto& c : lv.u_chol) {
    r = r + ad::squared_norm(ad::solve_lower(kmm_chol, c));
    logdets = logdets + ad::log_det_chol(c);
  }
  const double constant = entropy_lower(std::span<const double>(), m, d, lv.q);
  r = ad::clamp_min(r, kRadiusFloor);
  return add_const(0.5 * logdets, constant) + phi(r, ad::log_det_chol(kmm_chol), m, d, lv.q);
}

/// Lower bound on the entropy of q(X) with diagonal S_n.
inline ad::Var entropy_x(const ad::Var& s, double q) {
  const double constant = entropy_lower(std::span<const double>(), s.rows(), s.cols(), q);
  return add_const(0.5 * ad::sum(ad::log(s)), constant);
}

/// -KL*_X against the standard prior on X, with φ taken over N rows and Q columns.
inline ad::Var neg_kl_x(const ad::Var& mu, const ad::Var& s, double q) {
  ad::Tape& t = *mu.tape();
  const ad::Var r = ad::clamp_min(ad::squared_norm(mu) + ad::sum(s), kRadiusFloor);
  return entropy_x(s, q) + phi(r, t.constant(0.0), mu.rows(), mu.cols(), q);
}

/// Psi statistics of layer `lv` under q(X) = (mu, s): closed form when the kernel
/// has one and no noise is supplied, otherwise the MC route on `noise`.
inline kern::PsiVars psi(const LayerVars& lv, const ad::Var& mu, const ad::Var& s, const Matrix* noise) {
  if (noise) return kern::psi_mc(lv.kernel, mu, s, lv.inducing, *noise);
  return kern::psi_closed(lv.kernel, mu, s, lv.inducing);
}

struct QfMarginals {
  ad::Var mean;  // T×D
  ad::Var var;   // T×D
};

/// Per-point marginals of q(F) at x:
///   mean K_xM K⁻¹M,  var k(x,x) - K_xM K⁻¹K_Mx + K_xM K⁻¹Σ_dK⁻¹K_Mx.
inline QfMarginals q_f_marginals(const LayerVars& lv, const ad::Var& kmm_chol, const ad::Var& x) {
  const ad::Var b = ad::solve_lower(kmm_chol, ad::transpose(kern::cross(lv.kernel, x, lv.inducing)));  // M×T
  const ad::Var a = ad::solve_lower(kmm_chol, lv.u_mean);                                            // M×D
  const ad::Var mean = ad::matmul_tn(b, a);
  const ad::Var base = kern::diag_self(lv.kernel, x) - ad::transpose(ad::col_sum(ad::square(b)));
  ad::Tape& t = *x.tape();
  ad::Var var;
  for (std::size_t d = 0; d < lv.u_chol.size(); ++d) {
    const ad::Var w = ad::matmul_tn(ad::solve_lower(kmm_chol, lv.u_chol[d]), b);  // M×T
    const ad::Var col = base + ad::transpose(ad::col_sum(ad::square(w)));
    Matrix sel = Matrix::Zero(1, lv.u_chol.size());
    sel(0, d) = 1.0;
    const ad::Var placed = ad::matmul(col, t.constant(sel));
    var = var.valid() ? var + placed : placed;
  }
  return {mean, ad::clamp_min(var, 0.0)};
}

}  // namespace bound

// ---- parameters --------------------------------------------------------------

/// Registers one layer's trainable blocks under `prefix`.
inline void add_layer_params(ParamVector& p, const std::string& prefix, const LayerSpec& spec,
                             const VariationalState& st, bool with_x) {
  p.add(prefix + "alpha", Matrix::Constant(1, 1, spec.kernel.alpha), Transform::log);
  p.add(prefix + "gamma", Matrix(spec.kernel.gamma.transpose()), Transform::log);
  p.add(prefix + "beta", Matrix::Constant(1, 1, spec.beta), Transform::log);
  p.add(prefix + "inducing", st.inducing, Transform::identity);
  p.add(prefix + "u_mean", st.u_mean, Transform::identity);
  for (std::size_t d = 0; d < st.u_cov_chol.size(); ++d) {
    p.add(prefix + "u_cov_chol." + std::to_string(d), st.u_cov_chol[d], Transform::packed_tri);
  }
  if (with_x) {
    p.add(prefix + "x_mean", st.x_mean, Transform::identity);
    p.add(prefix + "x_cov_diag", st.x_cov_diag, Transform::log);
  }
}

inline bound::LayerVars layer_vars(const BlockVars& v, const std::string& prefix, const LayerSpec& spec) {
  bound::LayerVars lv{{spec.kernel.family, v[prefix + "alpha"], v[prefix + "gamma"], spec.kernel.jitter},
                      v[prefix + "beta"], v[prefix + "inducing"], v[prefix + "u_mean"], {}, spec.q};
  for (long d = 0; d < spec.out_dim; ++d) lv.u_chol.push_back(v[prefix + "u_cov_chol." + std::to_string(d)]);
  return lv;
}

inline void read_layer_params(const ParamVector& p, const std::string& prefix, LayerSpec& spec,
                              VariationalState& st, bool with_x) {
  spec.kernel.alpha = p.get(prefix + "alpha")(0, 0);
  spec.kernel.gamma = p.get(prefix + "gamma").row(0).transpose();
  spec.beta = p.get(prefix + "beta")(0, 0);
  st.inducing = p.get(prefix + "inducing");
  st.u_mean = p.get(prefix + "u_mean");
  for (std::size_t d = 0; d < st.u_cov_chol.size(); ++d) {
    st.u_cov_chol[d] = p.get(prefix + "u_cov_chol." + std::to_string(d));
  }
  if (with_x) {
    st.x_mean = p.get(prefix + "x_mean");
    st.x_cov_diag = p.get(prefix + "x_cov_diag");
  }
}

// ---- value-level operations ----------------------------------------------------

inline ElboBreakdown shallow_elbo(const Matrix& y, const VariationalState& state, const LayerSpec& spec,
                                  const PsiStats& psi) {
  if (y.cols() != spec.out_dim) throw std::invalid_argument("shallow_elbo: y columns must equal out_dim");
  if (psi.psi1.rows() != y.rows() || psi.psi1.cols() != spec.num_inducing) {
    throw std::invalid_argument("shallow_elbo: psi1 shape");
  }
  if (state.x_mean.rows() != y.rows()) throw std::invalid_argument("shallow_elbo: x_mean rows must equal N");
  ad::Tape t;
  const auto lv = bound::constants(t, spec, state);
  const ad::Var kmm = ad::cholesky(kern::gram_sym(lv.kernel, lv.inducing), "K_MM");
  const kern::PsiVars pv{t.constant(psi.psi0), t.constant(psi.psi1), t.constant(psi.psi2)};
  const auto h = bound::h_star(t.constant(y), nullptr, pv, lv, kmm);
  ElboBreakdown out;
  out.h_star = h.h.scalar();
  out.kl_u_star = -bound::neg_kl_u(lv, kmm).scalar();
  out.kl_x_star = -bound::neg_kl_x(t.constant(state.x_mean), t.constant(state.x_cov_diag), spec.q).scalar();
  out.total = out.h_star - out.kl_u_star - out.kl_x_star;
  out.r_y = h.r;
  out.clamped = h.clamped ? 1 : 0;
  return out;
}

struct RegressionPrediction {
  Matrix mean;  // T×D
  Matrix cov;   // T×T, shared by every output column
  double q = 2.0;
};

/// Exact posterior predictive of the latent function at x_test.
inline RegressionPrediction qep_regression_predict(const Matrix& x_train, const Matrix& y_train, const LayerSpec& spec,
                                                   const Matrix& x_test) {
  spec.kernel.validate();
  if (x_train.rows() != y_train.rows()) throw std::invalid_argument("qep_regression_predict: x/y row mismatch");
  Matrix c = gram(spec.kernel, x_train);
  c.diagonal().array() += 1.0 / spec.beta;
  const Matrix l = linalg::cholesky(c, "C + Σ").factor;
  const Matrix cs = gram(spec.kernel, x_train, x_test);  // N×T
  const Matrix css = gram(spec.kernel, x_test);
  const Matrix w = linalg::solve_lower(l, cs);
  return {w.transpose() * linalg::solve_lower(l, y_train), linalg::symmetrize(css - w.transpose() * w), spec.q};
}

/// log-likelihood of Y under vec(Y) ~ q-ED(0, I_D ⊗ K), K = C_X + β⁻¹I, without
/// the normalizing constants.
inline double marginal_loglik(const Matrix& y, const Matrix& x, const LayerSpec& spec) {
  if (y.rows() != x.rows()) throw std::invalid_argument("marginal_loglik: x/y row mismatch");
  Matrix k = gram(spec.kernel, x);
  k.diagonal().array() += 1.0 / spec.beta;
  const Matrix l = linalg::cholesky(k, "K").factor;
  const double r = linalg::solve_lower(l, y).squaredNorm();
  const double n = static_cast<double>(y.rows()), d = static_cast<double>(y.cols());
  if (r == 0.0 && spec.q != 2.0) throw SingularDensity("marginal_loglik: r(Y) = 0");
  double out = -0.5 * d * linalg::log_det_from_factor(l) - 0.5 * std::pow(r, spec.q / 2.0);
  if (spec.q != 2.0) out += 0.5 * n * d * (spec.q / 2.0 - 1.0) * std::log(r);
  return out;
}

struct PcaInitReport {
  std::vector<long> zeroed;  // components whose cλ_i ≤ β⁻¹
  bool degenerate = false;
  double c = 0.0;
};

/// Maximum-likelihood latent positions for the linear-kernel marginal model:
/// X = U_Q diag(l_i), l_i = √(α(cλ_i - β⁻¹)), with c the positive root of
/// c = h(k/c + ρ), h(r) = N(1 - q/2)/r + (q/(2D)) r^{q/2-1},
/// k = number of active components and ρ = β Σ_{inactive} λ_i.
inline Matrix mle_pca_init(const Matrix& y, long latent_dim, double alpha, double beta, double q,
                           PcaInitReport* report = nullptr) {
  const long n = y.rows(), dcols = y.cols();
  if (latent_dim < 1 || latent_dim > n) throw std::invalid_argument("mle_pca_init: need 1 <= Q <= N");
  if (!(alpha > 0.0 && beta > 0.0 && q > 0.0)) throw std::invalid_argument("mle_pca_init: alpha, beta, q must be > 0");
  Eigen::SelfAdjointEigenSolver<Matrix> es(linalg::symmetrize(y * y.transpose()));
  if (es.info() != Eigen::Success) throw NumericalFailure("mle_pca_init: eigen-decomposition failed");
  // descending order
  const Vector lambda = es.eigenvalues().reverse().cwiseMax(0.0);
  Matrix u = es.eigenvectors().rowwise().reverse();
  for (long j = 0; j < u.cols(); ++j) {
    for (long i = 0; i < n; ++i) {
      if (std::abs(u(i, j)) > 1e-12) {
        if (u(i, j) < 0) u.col(j) *= -1.0;
        break;
      }
    }
  }
  const double dn = static_cast<double>(n), dd = static_cast<double>(dcols);
  auto h = [&](double r) { return dn * (1.0 - q / 2.0) / r + (q / (2.0 * dd)) * std::pow(r, q / 2.0 - 1.0); };
  auto solve_c = [&](long k) -> std::optional<double> {
    double rho = 0.0;
    for (long i = k; i < n; ++i) rho += beta * lambda[i];
    auto g = [&](double c) { return c - h(static_cast<double>(k) / c + rho); };
    double lo = 1e-300, hi = 1.0;
    if (g(lo) >= 0.0) return std::nullopt;
    while (g(hi) <= 0.0) {
      hi *= 2.0;
      if (hi > 1e300) return std::nullopt;
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = std::sqrt(lo * hi) > 0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
      (g(mid) < 0.0 ? lo : hi) = mid;
      if (hi / lo - 1.0 < 1e-15) break;
    }
    return 0.5 * (lo + hi);
  };
  PcaInitReport rep;
  Matrix x = Matrix::Zero(n, latent_dim);
  long active = std::min<long>(latent_dim, n);
  while (active > 0) {
    const auto c = solve_c(active);
    if (c && *c * lambda[active - 1] > 1.0 / beta) {
      rep.c = *c;
      break;
    }
    --active;
  }
  for (long i = 0; i < latent_dim; ++i) {
    if (i < active) {
      x.col(i) = u.col(i) * std::sqrt(alpha * (rep.c * lambda[i] - 1.0 / beta));
    } else {
      rep.zeroed.push_back(i);
    }
  }
  if (active == 0) {
    rep.degenerate = true;
    std::cerr << "warning: mle_pca_init: every component is inactive; using a small random initialization\n";
    std::mt19937_64 rng(0);
    std::normal_distribution<double> g(0.0, 1e-2);
    for (long i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  }
  if (report) *report = rep;
  return x;
}

struct QfPrediction {
  Matrix mean;              // T×D
  Matrix base_cov;          // K_** - K_*M K⁻¹K_M*
  std::vector<Matrix> cov;  // per output: base_cov + K_*M K⁻¹Σ_dK⁻¹K_M*
  double q = 2.0;
};

inline QfPrediction predict_q_f(const VariationalState& state, const LayerSpec& spec, const Matrix& x_new) {
  if (x_new.cols() != spec.in_dim) throw std::invalid_argument("predict_q_f: x_new columns must equal in_dim");
  spec.validate();
  state.validate(spec);
  KernelSpec noj = spec.kernel;
  noj.jitter = 0.0;
  const Matrix l = linalg::cholesky(gram(spec.kernel, state.inducing), "K_MM").factor;
  const Matrix b = linalg::solve_lower(l, gram(spec.kernel, state.inducing, x_new));  // M×T
  QfPrediction out;
  out.q = spec.q;
  out.mean = b.transpose() * linalg::solve_lower(l, state.u_mean);
  out.base_cov = linalg::symmetrize(gram(noj, x_new) - b.transpose() * b);
  for (const auto& c : state.u_cov_chol) {
    const Matrix w = linalg::solve_lower(l, c).transpose() * b;
    out.cov.push_back(linalg::symmetrize(out.base_cov + w.transpose() * w));
  }
  return out;
}

// ---- initialization helpers ------------------------------------------------------

/// Lloyd's k-means with seeded distinct-point initialization; when m exceeds the
/// number of points the surplus centers are jittered copies.
inline Matrix kmeans_centers(const Matrix& x, long m, unsigned long seed, int iterations = 25) {
  const long n = x.rows();
  if (m < 1 || n < 1) throw std::invalid_argument("kmeans_centers: need points and m >= 1");
  std::mt19937_64 rng(seed);
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix c(m, x.cols());
  std::normal_distribution<double> g(0.0, 1e-2);
  for (long j = 0; j < m; ++j) {
    c.row(j) = x.row(idx[j % n]);
    if (j >= n)
      for (long k = 0; k < x.cols(); ++k) c(j, k) += g(rng);
  }
  if (m >= n) return c;
  std::vector<long> assign(n, -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (long i = 0; i < n; ++i) {
      long best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (long j = 0; j < m; ++j) {
        const double d = (x.row(i) - c.row(j)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    Matrix sum = Matrix::Zero(m, x.cols());
    Vector count = Vector::Zero(m);
    for (long i = 0; i < n; ++i) {
      sum.row(assign[i]) += x.row(i);
      count[assign[i]] += 1.0;
    }
    for (long j = 0; j < m; ++j)
      if (count[j] > 0) c.row(j) = sum.row(j) / count[j];
    if (!changed) break;
  }
  return c;
}

/// Variational state for a layer mapping `x_mean` to `targets`: k-means inducing
/// inputs, the collapsed-bound optimal u_mean at the point inputs, and small
/// isotropic factors.
inline VariationalState init_layer_state(const Matrix& targets, const Matrix& x_mean, const Matrix& x_cov_diag,
                                         const LayerSpec& spec, unsigned long seed, double u_cov_scale = 0.1) {
  VariationalState st;
  st.inducing = kmeans_centers(x_mean, spec.num_inducing, seed);
  const Matrix kmm = gram(spec.kernel, st.inducing);
  const Matrix knm = gram(spec.kernel, x_mean, st.inducing);
  const Matrix a = linalg::symmetrize(kmm + spec.beta * knm.transpose() * knm);
  const Matrix la = linalg::cholesky(a, "u_mean init").factor;
  st.u_mean = spec.beta * kmm * linalg::solve_factor(la, knm.transpose() * targets);
  const double mag = u_cov_scale * std::sqrt(1.0 / spec.kernel.alpha);
  st.u_cov_chol.assign(spec.out_dim, mag * Matrix::Identity(spec.num_inducing, spec.num_inducing));
  st.x_mean = x_mean;
  st.x_cov_diag = x_cov_diag;
  return st;
}

}  // namespace qepdx
