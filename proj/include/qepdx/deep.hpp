#pragma once

// Stacked Q-EP layers. Layer ℓ maps X^{ℓ+1} (width D_{ℓ+1}) to X^ℓ (width D_ℓ);
// X^0 is the data. states[ℓ].x_mean / x_cov_diag describe q(X^{ℓ+1}), i.e. the
// input of layer ℓ. In supervised mode the top input is the observed covariates
// and states[L-1].x_mean stays empty.
//
//   ELBO = h_0 - KL_U0 + Σ_{ℓ≥1} [h_ℓ - KL_Uℓ + H(X^ℓ)] - KL_Z

#include <functional>
#include <random>
#include <vector>

#include "qepdx/shallow.hpp"

namespace qepdx {

enum class Mode { supervised, unsupervised };
enum class Likelihood { regression, classification };

struct DeepModel {
  Mode mode = Mode::supervised;
  Likelihood likelihood = Likelihood::regression;
  double q = 2.0;
  std::vector<LayerSpec> layers;  // layers[0] produces the outputs
  std::vector<VariationalState> states;
  long mc_draws = kDefaultMaternDraws;  // per-point draws for MC expectations

  long num_layers() const { return static_cast<long>(layers.size()); }
  long input_dim() const { return layers.back().in_dim; }
  long output_dim() const { return layers.front().out_dim; }

  bool latent_input(long l) const { return mode == Mode::unsupervised || l < num_layers() - 1; }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("DeepModel: no layers");
    if (states.size() != layers.size()) throw std::invalid_argument("DeepModel: one state per layer required");
    if (mc_draws < 1) throw std::invalid_argument("DeepModel: mc_draws must be >= 1");
    for (long l = 0; l < num_layers(); ++l) {
      const auto& s = layers[l];
      s.validate();
      if (s.q != q) throw std::invalid_argument("DeepModel: every layer must share the model q");
      if (l + 1 < num_layers() && s.in_dim != layers[l + 1].out_dim) {
        throw std::invalid_argument("DeepModel: width mismatch between layers " + std::to_string(l) + " and " +
                                    std::to_string(l + 1));
      }
      states[l].validate(s);
      if (latent_input(l) && states[l].x_mean.size() == 0) {
        throw std::invalid_argument("DeepModel: layer " + std::to_string(l) + " needs q(X) state");
      }
    }
  }
};

struct LayerBound {
  double h_star = 0.0;
  double kl_u_star = 0.0;
  double entropy = 0.0;  // H(X^ℓ) lower bound; 0 for the output layer
};

struct DeepElboBreakdown {
  std::vector<LayerBound> per_layer;
  double kl_z_star = 0.0;
  double total = 0.0;
  long clamped = 0;
};

namespace deep_detail {

inline std::string prefix(long l) { return "L" + std::to_string(l) + "."; }

/// Per-step, per-slot random stream derived from (seed, step, slot).
inline std::mt19937_64 stream(unsigned long seed, long step, long slot) {
  std::seed_seq seq{static_cast<unsigned long>(seed), static_cast<unsigned long>(step),
                    static_cast<unsigned long>(slot), 0x51ed2701UL};
  return std::mt19937_64(seq);
}

/// Base draws for one bound evaluation: MC psi noise per layer (empty when the
/// layer's statistics are closed form or exact) and the classification draws.
struct Noise {
  std::vector<Matrix> psi;  // per layer
  Matrix class_x;           // N·S × D_1 (latent input of the output layer)
  Matrix class_f;           // N·S × D_0
};

inline bool needs_mc(const DeepModel& m, long l) {
  return m.latent_input(l) && m.layers[l].kernel.family == KernelFamily::matern32_ard;
}

inline Noise make_noise(const DeepModel& m, long n, unsigned long seed, long step) {
  Noise out;
  out.psi.resize(m.num_layers());
  for (long l = 0; l < m.num_layers(); ++l) {
    if (l == 0 && m.likelihood == Likelihood::classification) continue;
    if (needs_mc(m, l)) {
      auto rng = stream(seed, step, l);
      out.psi[l] = kern::psi_noise(n, m.layers[l].in_dim, m.mc_draws, m.q, rng);
    }
  }
  if (m.likelihood == Likelihood::classification) {
    auto rng = stream(seed, step, 1000);
    if (m.latent_input(0)) out.class_x = kern::psi_noise(n, m.layers[0].in_dim, m.mc_draws, m.q, rng);
    out.class_f = kern::psi_noise(n, m.layers[0].out_dim, m.mc_draws, m.q, rng);
  }
  return out;
}

/// Exact statistics for observed inputs.
inline kern::PsiVars psi_observed(const bound::LayerVars& lv, const ad::Var& x) {
  const ad::Var k = kern::cross(lv.kernel, x, lv.inducing);
  return {ad::sum(kern::diag_self(lv.kernel, x)), k, ad::matmul_tn(k, k)};
}

struct Terms {
  ad::Var total;
  std::vector<ad::Var> h, neg_kl_u, entropy;
  ad::Var neg_kl_z;
  long clamped = 0;
};

/// The bound on the tape. `x_mean[l]`, `x_var[l]` are q(X^{l+1}); for an observed
/// top input x_var is invalid and x_mean holds the covariates.
inline Terms terms(ad::Tape& t, const DeepModel& m, const Matrix& y, const std::vector<bound::LayerVars>& lv,
                   const std::vector<ad::Var>& x_mean, const std::vector<ad::Var>& x_var, const Noise& noise) {
  const long n_layers = m.num_layers();
  Terms out;
  ad::Var total;
  auto acc = [&](const ad::Var& v) { total = total.valid() ? total + v : v; };
  for (long l = 0; l < n_layers; ++l) {
    const ad::Var kmm = ad::cholesky(kern::gram_sym(lv[l].kernel, lv[l].inducing), "K_MM");
    ad::Var h;
    if (l == 0 && m.likelihood == Likelihood::classification) {
      const long n = y.rows();
      const long draws = noise.class_f.rows() / n;
      std::vector<int> labels(n * draws);
      for (long i = 0; i < n; ++i)
        for (long s = 0; s < draws; ++s) labels[i * draws + s] = static_cast<int>(y(i, 0));
      const ad::Var xs = m.latent_input(0) ? kern::mc_points(x_mean[0], x_var[0], noise.class_x)
                                           : ad::repeat_rows(x_mean[0], draws);
      const auto marg = bound::q_f_marginals(lv[0], kmm, xs);
      const ad::Var f = marg.mean + ad::cmul(ad::sqrt(ad::add_const(marg.var, 1e-12)), t.constant(noise.class_f));
      h = (1.0 / static_cast<double>(draws)) * ad::sum(ad::log_softmax_pick(f, labels));
    } else {
      const ad::Var target = l == 0 ? t.constant(y) : x_mean[l - 1];
      const ad::Var* target_var = l == 0 ? nullptr : &x_var[l - 1];
      kern::PsiVars psi;
      if (!m.latent_input(l)) {
        psi = psi_observed(lv[l], x_mean[l]);
      } else {
        psi = bound::psi(lv[l], x_mean[l], x_var[l], needs_mc(m, l) ? &noise.psi[l] : nullptr);
      }
      const auto hs = bound::h_star(target, target_var, psi, lv[l], kmm);
      out.clamped += hs.clamped ? 1 : 0;
      h = hs.h;
    }
    const ad::Var klu = bound::neg_kl_u(lv[l], kmm);
    out.h.push_back(h);
    out.neg_kl_u.push_back(klu);
    acc(h + klu);
    if (l >= 1) {
      const ad::Var e = bound::entropy_x(x_var[l - 1], m.q);
      out.entropy.push_back(e);
      acc(e);
    } else {
      out.entropy.push_back(t.constant(0.0));
    }
  }
  if (m.mode == Mode::unsupervised) {
    out.neg_kl_z = bound::neg_kl_x(x_mean[n_layers - 1], x_var[n_layers - 1], m.q);
    acc(out.neg_kl_z);
  } else {
    out.neg_kl_z = t.constant(0.0);
  }
  out.total = total;
  return out;
}

inline void check_data(const DeepModel& m, const Matrix& y, const Matrix* inputs) {
  m.validate();
  const long n = y.rows();
  if (m.likelihood == Likelihood::regression && y.cols() != m.output_dim()) {
    throw std::invalid_argument("deep: y has " + std::to_string(y.cols()) + " columns, model outputs " +
                                std::to_string(m.output_dim()));
  }
  if (m.likelihood == Likelihood::classification) {
    if (y.cols() != 1) throw std::invalid_argument("deep: classification targets are one label column");
    for (long i = 0; i < n; ++i) {
      const double v = y(i, 0);
      if (v < 0 || v >= m.output_dim() || v != std::floor(v)) throw DataError("deep: label out of range", i + 1);
    }
  }
  if (m.mode == Mode::supervised) {
    if (!inputs) throw std::invalid_argument("deep: supervised mode requires inputs");
    if (inputs->rows() != n || inputs->cols() != m.input_dim()) throw std::invalid_argument("deep: inputs shape");
  }
  for (long l = 0; l < m.num_layers(); ++l) {
    if (m.latent_input(l) && m.states[l].x_mean.rows() != n) {
      throw std::invalid_argument("deep: q(X) rows must equal N in layer " + std::to_string(l));
    }
  }
}

}  // namespace deep_detail

/// Trainable blocks of the whole model, prefixed "L<ℓ>.".
inline ParamVector model_params(const DeepModel& m) {
  ParamVector p;
  for (long l = 0; l < m.num_layers(); ++l) {
    add_layer_params(p, deep_detail::prefix(l), m.layers[l], m.states[l], m.latent_input(l));
  }
  return p;
}

inline void read_model_params(const ParamVector& p, DeepModel& m) {
  for (long l = 0; l < m.num_layers(); ++l) {
    read_layer_params(p, deep_detail::prefix(l), m.layers[l], m.states[l], m.latent_input(l));
  }
}

/// Loss = -ELBO as an optimizer objective. MC noise is redrawn per step from `seed`.
inline Objective deep_objective(const DeepModel& m, const Matrix& y, const Matrix* inputs, unsigned long seed) {
  deep_detail::check_data(m, y, inputs);
  const Matrix in = inputs ? *inputs : Matrix();
  return [m, y, in, seed](ad::Tape& t, const BlockVars& v, long step) {
    const auto noise = deep_detail::make_noise(m, y.rows(), seed, step);
    std::vector<bound::LayerVars> lv;
    std::vector<ad::Var> xm, xv;
    for (long l = 0; l < m.num_layers(); ++l) {
      const std::string pre = deep_detail::prefix(l);
      lv.push_back(layer_vars(v, pre, m.layers[l]));
      if (m.latent_input(l)) {
        xm.push_back(v[pre + "x_mean"]);
        xv.push_back(v[pre + "x_cov_diag"]);
      } else {
        xm.push_back(t.constant(in));
        xv.push_back(ad::Var());
      }
    }
    return -deep_detail::terms(t, m, y, lv, xm, xv, noise).total;
  };
}

/// Evaluates the bound. Monte-Carlo parts (Matérn layers, classification) use
/// draws seeded by `mc_seed`.
inline DeepElboBreakdown deep_elbo(const Matrix& y, const DeepModel& m, const Matrix* inputs = nullptr,
                                   unsigned long mc_seed = 0) {
  deep_detail::check_data(m, y, inputs);
  ad::Tape t;
  std::vector<bound::LayerVars> lv;
  std::vector<ad::Var> xm, xv;
  for (long l = 0; l < m.num_layers(); ++l) {
    lv.push_back(bound::constants(t, m.layers[l], m.states[l]));
    if (m.latent_input(l)) {
      xm.push_back(t.constant(m.states[l].x_mean));
      xv.push_back(t.constant(m.states[l].x_cov_diag));
    } else {
      xm.push_back(t.constant(*inputs));
      xv.push_back(ad::Var());
    }
  }
  const auto noise = deep_detail::make_noise(m, y.rows(), mc_seed, 0);
  const auto terms = deep_detail::terms(t, m, y, lv, xm, xv, noise);
  DeepElboBreakdown out;
  for (long l = 0; l < m.num_layers(); ++l) {
    out.per_layer.push_back({terms.h[l].scalar(), -terms.neg_kl_u[l].scalar(), terms.entropy[l].scalar()});
  }
  out.kl_z_star = -terms.neg_kl_z.scalar();
  out.total = terms.total.scalar();
  out.clamped = terms.clamped;
  return out;
}

struct DeepPrediction {
  std::vector<Matrix> samples;  // n_samples entries of T×D_0 (class probabilities for classification)
  Matrix mean;                  // T×D_0
  Matrix stddev;                // T×D_0
};

/// Ancestral sampling through the layers: at each layer draw per-point outputs
/// from the q(F^ℓ) marginals plus the layer noise β_ℓ⁻¹ (omitted on a
/// classification output, whose samples are passed through a softmax).
/// For regression the mean and stddev average the output layer's conditional
/// moments over the upper-layer draws instead of using the noisy samples.
template <class Rng>
DeepPrediction deep_predict(const DeepModel& m, const Matrix& x_new, long n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("deep_predict: n_samples must be >= 1");
  if (m.mode != Mode::supervised) throw std::invalid_argument("deep_predict: supervised models only");
  if (x_new.cols() != m.input_dim()) throw std::invalid_argument("deep_predict: x_new columns must equal the input width");
  m.validate();
  const long t_pts = x_new.rows();
  const long d0 = m.output_dim();
  const bool regression = m.likelihood == Likelihood::regression;
  std::vector<Matrix> chol(m.num_layers());
  for (long l = 0; l < m.num_layers(); ++l) {
    chol[l] = linalg::cholesky(gram(m.layers[l].kernel, m.states[l].inducing), "K_MM").factor;
  }
  DeepPrediction out;
  out.samples.reserve(n_samples);
  Matrix mean_sum = Matrix::Zero(t_pts, d0), mean_sq = Matrix::Zero(t_pts, d0), var_sum = Matrix::Zero(t_pts, d0);
  for (long s = 0; s < n_samples; ++s) {
    Matrix h = x_new;
    for (long l = m.num_layers() - 1; l >= 0; --l) {
      ad::Tape t;
      const auto lv = bound::constants(t, m.layers[l], m.states[l]);
      const auto marg = bound::q_f_marginals(lv, t.constant(chol[l]), t.constant(h));
      Matrix var = marg.var.value();
      const bool output_class = l == 0 && !regression;
      if (!output_class) var.array() += 1.0 / m.layers[l].beta;
      const long d = m.layers[l].out_dim;
      if (l == 0 && regression) {
        mean_sum += marg.mean.value();
        mean_sq += marg.mean.value().cwiseAbs2();
        var_sum += covariance_scaling(d, m.q) * var;
      }
      Matrix next(t_pts, d);
      for (long i = 0; i < t_pts; ++i) {
        const Vector e = draw_standard(d, m.q, rng);
        next.row(i) = marg.mean.value().row(i) + (var.row(i).array().sqrt() * e.transpose().array()).matrix();
      }
      h = std::move(next);
    }
    if (!regression) {
      for (long i = 0; i < t_pts; ++i) {
        const Eigen::RowVectorXd e = (h.row(i).array() - h.row(i).maxCoeff()).exp().matrix();
        h.row(i) = e / e.sum();
      }
    }
    out.samples.push_back(std::move(h));
  }
  const double ns = static_cast<double>(n_samples);
  if (regression) {
    out.mean = mean_sum / ns;
    const Matrix spread = (mean_sq / ns - out.mean.cwiseAbs2()).cwiseMax(0.0);
    out.stddev = (var_sum / ns + spread).cwiseSqrt();
    return out;
  }
  out.mean = Matrix::Zero(t_pts, d0);
  for (const auto& x : out.samples) out.mean += x;
  out.mean /= ns;
  out.stddev = Matrix::Zero(t_pts, d0);
  if (n_samples > 1) {
    for (const auto& x : out.samples) out.stddev += (x - out.mean).cwiseAbs2();
    out.stddev = (out.stddev / (ns - 1.0)).cwiseSqrt();
  }
  return out;
}

// ---- construction and training ----------------------------------------------------

struct ModelOptions {
  Mode mode = Mode::supervised;
  Likelihood likelihood = Likelihood::regression;
  double q = 2.0;
  long num_layers = 2;
  std::vector<long> hidden_widths;  // D_1..D_{L-1}; default min(input width, 2) each
  long latent_dim = 2;              // D_L in unsupervised mode
  long num_classes = 0;             // classification output width
  KernelFamily family = KernelFamily::se_ard;
  long num_inducing = 32;
  long mc_draws = kDefaultMaternDraws;
  double init_gamma = 1.0;
  double init_x_var = 0.1;         // latent-variable inputs
  double init_hidden_var = 0.01;    // hidden layers of supervised models
  double init_noise_ratio = 0.01;   // output noise variance as a fraction of target variance
  double hidden_beta = 100.0;
  unsigned long seed = 0;
};

namespace deep_detail {

/// Latent initialization: principal directions from mle_pca_init (linear kernel,
/// unit α and the layer β), each column rescaled to unit RMS.
inline Matrix pca_latent(const Matrix& source, long width, double beta, double q) {
  const Matrix centered = source.rowwise() - source.colwise().mean();
  const long w = std::min<long>(width, centered.rows());
  Matrix x = mle_pca_init(centered, w, 1.0, beta, q);
  for (long j = 0; j < x.cols(); ++j) {
    const double rms = std::sqrt(x.col(j).squaredNorm() / x.rows());
    if (rms > 0) x.col(j) /= rms;
  }
  if (w < width) {
    Matrix full = Matrix::Zero(x.rows(), width);
    full.leftCols(w) = x;
    return full;
  }
  return x;
}

}  // namespace deep_detail

/// Builds and initializes a model for targets y (N×D regression targets or an
/// N×1 label column) and optional covariates.
inline DeepModel make_model(const Matrix& y, const Matrix* inputs, const ModelOptions& o) {
  if (o.num_layers < 1) throw std::invalid_argument("make_model: num_layers must be >= 1");
  if (!(o.q > 0.0 && o.q <= 2.0)) throw std::invalid_argument("make_model: q must lie in (0, 2]");
  if (o.mode == Mode::supervised && !inputs) throw std::invalid_argument("make_model: supervised mode requires inputs");
  const long n = y.rows();
  const long n_layers = o.num_layers;
  const long out_dim = o.likelihood == Likelihood::classification ? o.num_classes : y.cols();
  if (out_dim < 1) throw std::invalid_argument("make_model: output width must be >= 1");
  const long top_dim = o.mode == Mode::supervised ? inputs->cols() : o.latent_dim;

  std::vector<long> widths(n_layers + 1);  // widths[ℓ] = D_ℓ
  widths[0] = out_dim;
  widths[n_layers] = top_dim;
  for (long l = 1; l < n_layers; ++l) {
    widths[l] = static_cast<std::size_t>(l - 1) < o.hidden_widths.size() ? o.hidden_widths[l - 1]
                                                                          : std::min<long>(top_dim, 2);
  }

  // Output-side targets: regression values, or one-hot labels for classification.
  Matrix targets = y;
  if (o.likelihood == Likelihood::classification) {
    targets = Matrix::Zero(n, out_dim);
    for (long i = 0; i < n; ++i) targets(i, static_cast<long>(y(i, 0))) = 1.0;
  }

  // Latent means q(X^ℓ), ℓ = 1..L (index ℓ-1 in `means`).
  std::vector<Matrix> means(n_layers);
  if (o.mode == Mode::unsupervised) {
    Matrix src = targets;
    for (long l = 1; l <= n_layers; ++l) {
      means[l - 1] = deep_detail::pca_latent(src, widths[l], o.hidden_beta, o.q);
      src = means[l - 1];
    }
  } else {
    means[n_layers - 1] = *inputs;
    Matrix src = *inputs;
    for (long l = n_layers - 1; l >= 1; --l) {
      means[l - 1] = widths[l] == src.cols() ? src : deep_detail::pca_latent(src, widths[l], o.hidden_beta, o.q);
      src = means[l - 1];
    }
  }

  DeepModel m;
  m.mode = o.mode;
  m.likelihood = o.likelihood;
  m.q = o.q;
  m.mc_draws = o.mc_draws;
  for (long l = 0; l < n_layers; ++l) {
    LayerSpec s;
    s.in_dim = widths[l + 1];
    s.out_dim = widths[l];
    s.q = o.q;
    s.num_inducing = std::min<long>(o.num_inducing, n);
    s.kernel.family = o.family;
    s.kernel.gamma = Vector::Constant(s.in_dim, o.init_gamma);
    const Matrix& tgt = l == 0 ? targets : means[l - 1];
    const Matrix centered = tgt.rowwise() - tgt.colwise().mean();
    const double var = std::max(centered.squaredNorm() / std::max<double>(1.0, tgt.size()), 1e-6);
    s.kernel.alpha = 1.0 / var;
    s.beta = l == 0 && o.likelihood == Likelihood::regression ? 1.0 / (o.init_noise_ratio * var) : o.hidden_beta;
    m.layers.push_back(s);
    const Matrix xv =
        Matrix::Constant(n, s.in_dim, o.mode == Mode::supervised ? o.init_hidden_var : o.init_x_var);
    auto st = init_layer_state(tgt, means[l], xv, s, o.seed + 17 * l);
    if (o.mode == Mode::supervised && l == n_layers - 1) {
      st.x_mean.resize(0, 0);
      st.x_cov_diag.resize(0, 0);
    }
    m.states.push_back(std::move(st));
  }
  m.validate();
  return m;
}

struct FitResult {
  DeepModel model;
  std::vector<double> elbo_trace;  // ELBO estimate at each iteration
};

inline FitResult fit(const Matrix& y, const DeepModel& model, const Matrix* inputs, const OptimConfig& cfg) {
  const auto obj = deep_objective(model, y, inputs, cfg.seed);
  const auto res = minimize(obj, model_params(model), cfg);
  FitResult out{model, {}};
  read_model_params(res.params, out.model);
  out.elbo_trace.reserve(res.trace.size());
  for (double v : res.trace) out.elbo_trace.push_back(-v);
  return out;
}

}  // namespace qepdx
