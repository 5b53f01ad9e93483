#pragma once

// ARD kernels, Gram matrices and psi statistics
//   ψ0 = Σ_n <k(x_n, x_n)>,  Ψ1 = <K_NM>,  Ψ2 = Σ_n <K_MnK_nM>
// under q(x_n) = q-ED(µ_n, diag(S_n)). Every computation is written once on the
// AD tape; the plain-value entry points run the same code on constants.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qepdx/ad.hpp"
#include "qepdx/qed.hpp"

namespace qepdx {

enum class KernelFamily { se_ard, linear_ard, matern32_ard };

inline std::string family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::se_ard: return "se_ard";
    case KernelFamily::linear_ard: return "linear_ard";
    case KernelFamily::matern32_ard: return "matern32_ard";
  }
  return "?";
}

inline KernelFamily parse_family(const std::string& s) {
  if (s == "se_ard" || s == "se" || s == "rbf") return KernelFamily::se_ard;
  if (s == "linear_ard" || s == "linear") return KernelFamily::linear_ard;
  if (s == "matern32_ard" || s == "matern32" || s == "matern") return KernelFamily::matern32_ard;
  throw std::invalid_argument("unknown kernel family '" + s + "'");
}

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr long kDefaultMaternDraws = 128;

struct KernelSpec {
  KernelFamily family = KernelFamily::se_ard;
  double alpha = 1.0;  // inverse magnitude
  Vector gamma;        // ARD precisions, one per input dimension
  double jitter = kDefaultJitter;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("KernelSpec: alpha must be > 0");
    if (gamma.size() < 1) throw std::invalid_argument("KernelSpec: empty gamma");
    if (!(gamma.array() >= 0.0).all() || !gamma.allFinite()) {
      throw std::invalid_argument("KernelSpec: gamma must be >= 0");
    }
    if (!(jitter >= 0.0)) throw std::invalid_argument("KernelSpec: jitter must be >= 0");
  }
};

struct PsiStats {
  double psi0 = 0.0;
  Matrix psi1;
  Matrix psi2;
  std::vector<Matrix> per_point_psi2;  // filled on request only
};

namespace kern {

/// Kernel hyperparameters as tape nodes: alpha 1×1, gamma 1×Q (both already positive).
struct KernelVars {
  KernelFamily family;
  ad::Var alpha;
  ad::Var gamma;
  double jitter;
  Eigen::Index dim() const { return gamma.cols(); }
};

struct PsiVars {
  ad::Var psi0;  // 1×1
  ad::Var psi1;  // N×M
  ad::Var psi2;  // M×M
};

inline KernelVars constants(ad::Tape& t, const KernelSpec& spec) {
  spec.validate();
  return {spec.family, t.constant(spec.alpha), t.constant(Matrix(spec.gamma.transpose())), spec.jitter};
}

inline ad::Var inv_alpha(const KernelVars& k) { return ad::pow(k.alpha, -1.0); }

/// k(a_n, b_m) without jitter.
inline ad::Var cross(const KernelVars& k, const ad::Var& a, const ad::Var& b) {
  if (a.cols() != k.dim() || b.cols() != k.dim()) throw std::invalid_argument("gram: input dimension mismatch");
  ad::Var shape;
  switch (k.family) {
    case KernelFamily::se_ard:
      shape = ad::exp(-0.5 * ad::weighted_sqdist(a, b, k.gamma));
      break;
    case KernelFamily::matern32_ard:
      shape = ad::matern32_of_sqdist(ad::weighted_sqdist(a, b, k.gamma));
      break;
    case KernelFamily::linear_ard:
      shape = ad::matmul(ad::scale_cols(a, k.gamma), ad::transpose(b));
      break;
  }
  return ad::scale_by(shape, inv_alpha(k));
}

/// diag k(x_n, x_n) as an N×1 column, no jitter.
inline ad::Var diag_self(const KernelVars& k, const ad::Var& x) {
  if (x.cols() != k.dim()) throw std::invalid_argument("gram: input dimension mismatch");
  if (k.family == KernelFamily::linear_ard) {
    return ad::scale_by(ad::row_sum(ad::scale_cols(ad::square(x), k.gamma)), inv_alpha(k));
  }
  return ad::scale_by(x.tape()->constant(Matrix::Ones(x.rows(), 1)), inv_alpha(k));
}

/// Square Gram of one point set, jitter·α⁻¹ on the diagonal.
inline ad::Var gram_sym(const KernelVars& k, const ad::Var& a) {
  return ad::add_diag_scaled(cross(k, a, a), inv_alpha(k), k.jitter);
}

/// Closed-form statistics: exact for linear_ard, the exponential-of-expected-
/// quadratic approximation for se_ard.
inline PsiVars psi_closed(const KernelVars& k, const ad::Var& mu, const ad::Var& s, const ad::Var& z) {
  if (mu.rows() != s.rows() || mu.cols() != s.cols()) throw std::invalid_argument("psi: mu and s_diag shapes differ");
  if (mu.cols() != k.dim() || z.cols() != k.dim()) throw std::invalid_argument("psi: input dimension mismatch");
  ad::Tape& t = *mu.tape();
  const double n = static_cast<double>(mu.rows());
  const ad::Var ia = inv_alpha(k);
  switch (k.family) {
    case KernelFamily::se_ard: {
      const ad::Var tn = ad::matmul(s, ad::transpose(k.gamma));  // N×1, tr(diag(γ)S_n)
      const ad::Var d = ad::weighted_sqdist(mu, z, k.gamma);
      const ad::Var ones = t.constant(Matrix::Ones(1, z.rows()));
      const ad::Var psi1 = ad::scale_by(ad::exp(-0.5 * (d + ad::matmul(tn, ones))), ia);
      // (Ψ2ⁿ)mm' = α⁻² exp(-½[d_nm + d_nm' + t_n]) = Ψ1_nm Ψ1_nm' exp(½ t_n)
      const ad::Var w = ad::scale_rows(psi1, ad::exp(0.25 * tn));
      return {ad::scale_by(t.constant(n), ia), psi1, ad::matmul_tn(w, w)};
    }
    case KernelFamily::linear_ard: {
      const ad::Var zg = ad::scale_cols(z, k.gamma);  // M×Q
      const ad::Var psi0 = ad::scale_by(ad::sum(ad::scale_cols(ad::square(mu) + s, k.gamma)), ia);
      const ad::Var psi1 = ad::scale_by(ad::matmul(mu, ad::transpose(zg)), ia);
      const ad::Var second = ad::matmul_tn(mu, mu) + ad::diag_embed(ad::transpose(ad::col_sum(s)));
      const ad::Var psi2 = ad::scale_by(ad::matmul(ad::matmul(zg, second), ad::transpose(zg)), ad::square(ia));
      return {psi0, psi1, psi2};
    }
    case KernelFamily::matern32_ard:
      break;
  }
  throw UnsupportedFamily("psi_stats_closed: " + family_name(k.family) + " has no closed form; use the Monte-Carlo route");
}

/// Unit-scale q-ED base draws for the MC route: row (n·draws + s) is draw s of point n.
template <class Rng>
Matrix psi_noise(Eigen::Index n, Eigen::Index q_dim, long draws, double q, Rng& rng) {
  if (draws < 1) throw std::invalid_argument("psi_stats_mc: draws must be >= 1");
  Matrix e(n * draws, q_dim);
  for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) = draw_standard(q_dim, q, rng).transpose();
  return e;
}

/// Reparameterized samples x = µ + √S ∘ e for a fixed noise matrix from psi_noise.
inline ad::Var mc_points(const ad::Var& mu, const ad::Var& s, const Matrix& noise) {
  const Eigen::Index draws = noise.rows() / mu.rows();
  if (draws < 1 || noise.rows() != mu.rows() * draws || noise.cols() != mu.cols()) {
    throw std::invalid_argument("psi_stats_mc: noise shape mismatch");
  }
  ad::Tape& t = *mu.tape();
  return ad::repeat_rows(mu, draws) + ad::cmul(ad::repeat_rows(ad::sqrt(s), draws), t.constant(noise));
}

inline PsiVars psi_mc(const KernelVars& k, const ad::Var& mu, const ad::Var& s, const ad::Var& z,
                      const Matrix& noise) {
  if (mu.rows() != s.rows() || mu.cols() != s.cols()) throw std::invalid_argument("psi: mu and s_diag shapes differ");
  ad::Tape& t = *mu.tape();
  const Eigen::Index draws = noise.rows() / std::max<Eigen::Index>(mu.rows(), 1);
  const ad::Var x = mc_points(mu, s, noise);
  const ad::Var kxz = cross(k, x, z);
  const ad::Var psi1 = ad::block_mean_rows(kxz, draws);
  const ad::Var psi2 = (1.0 / static_cast<double>(draws)) * ad::matmul_tn(kxz, kxz);
  ad::Var psi0;
  if (k.family == KernelFamily::linear_ard) {
    psi0 = (1.0 / static_cast<double>(draws)) * ad::scale_by(ad::sum(ad::scale_cols(ad::square(x), k.gamma)), inv_alpha(k));
  } else {
    psi0 = ad::scale_by(t.constant(static_cast<double>(mu.rows())), inv_alpha(k));
  }
  return {psi0, psi1, psi2};
}

}  // namespace kern

/// K[n, m] = k(a_n, b_m). Pass the same matrix for a and b (or omit b) to get the
/// jittered square Gram.
inline Matrix gram(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  ad::Tape t;
  const auto k = kern::constants(t, spec);
  if (&a == &b) return kern::gram_sym(k, t.constant(a)).value();
  return kern::cross(k, t.constant(a), t.constant(b)).value();
}

inline Matrix gram(const KernelSpec& spec, const Matrix& a) { return gram(spec, a, a); }

namespace detail {

inline void fill_per_point(PsiStats& out, const Matrix& rows_psi1_like, Eigen::Index draws,
                           const Vector& row_weight) {
  // rows_psi1_like holds one M-vector per (point, draw); Ψ2ⁿ = mean_s w k kᵀ.
  const Eigen::Index n = rows_psi1_like.rows() / draws;
  out.per_point_psi2.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix blk = rows_psi1_like.middleRows(i * draws, draws);
    out.per_point_psi2.push_back(linalg::symmetrize(row_weight[i] * blk.transpose() * blk / draws));
  }
}

}  // namespace detail

inline PsiStats psi_stats_closed(const KernelSpec& spec, const Matrix& mu, const Matrix& s_diag,
                                 const Matrix& inducing, bool per_point = false) {
  ad::Tape t;
  const auto k = kern::constants(t, spec);
  const auto p = kern::psi_closed(k, t.constant(mu), t.constant(s_diag), t.constant(inducing));
  PsiStats out{p.psi0.scalar(), p.psi1.value(), linalg::symmetrize(p.psi2.value()), {}};
  if (per_point) {
    if (spec.family == KernelFamily::se_ard) {
      const Vector tn = s_diag * spec.gamma;
      detail::fill_per_point(out, out.psi1, 1, (tn * 0.5).array().exp().matrix());
    } else {
      const Matrix zg = inducing * spec.gamma.asDiagonal();
      for (Eigen::Index i = 0; i < mu.rows(); ++i) {
        Matrix second = mu.row(i).transpose() * mu.row(i);
        second.diagonal() += s_diag.row(i).transpose();
        out.per_point_psi2.push_back(zg * second * zg.transpose() / (spec.alpha * spec.alpha));
      }
    }
  }
  return out;
}

template <class Rng>
PsiStats psi_stats_mc(const KernelSpec& spec, const Matrix& mu, const Matrix& s_diag, const Matrix& inducing,
                      long draws, double q, Rng& rng, bool per_point = false) {
  const Matrix noise = kern::psi_noise(mu.rows(), mu.cols(), draws, q, rng);
  ad::Tape t;
  const auto k = kern::constants(t, spec);
  const ad::Var m = t.constant(mu), s = t.constant(s_diag), z = t.constant(inducing);
  const auto p = kern::psi_mc(k, m, s, z, noise);
  PsiStats out{p.psi0.scalar(), p.psi1.value(), linalg::symmetrize(p.psi2.value()), {}};
  if (per_point) {
    const Matrix kxz = kern::cross(k, kern::mc_points(m, s, noise), z).value();
    detail::fill_per_point(out, kxz, draws, Vector::Ones(mu.rows()));
  }
  return out;
}

}  // namespace qepdx
