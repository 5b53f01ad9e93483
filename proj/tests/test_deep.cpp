#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "qepdx/deep.hpp"

namespace {

using namespace qepdx;
using qepdx::testing::gaussian_path;
using qepdx::testing::layer_spec;
using qepdx::testing::random_state;
using qepdx::testing::uniform;

// Two layers: Z (2) -> X1 (2) -> Y (3).
DeepModel two_layer(long n, double q, Mode mode, std::mt19937_64& rng, KernelFamily f = KernelFamily::se_ard) {
  DeepModel m;
  m.mode = mode;
  m.q = q;
  m.mc_draws = 4;
  m.layers = {layer_spec(2, 3, 3, q, f), layer_spec(2, 2, 3, q, f)};
  m.layers[1].beta = 9.0;
  m.layers[1].kernel.alpha = 1.3;
  for (const auto& s : m.layers) m.states.push_back(random_state(s, n, rng));
  if (mode == Mode::supervised) {
    m.states[1].x_mean.resize(0, 0);
    m.states[1].x_cov_diag.resize(0, 0);
  }
  return m;
}

TEST(DeepElbo, SingleLayerEqualsShallow) {
  std::mt19937_64 rng(1);
  for (double q : {0.7, 1.0, 2.0}) {
    const auto s = layer_spec(2, 3, 4, q);
    DeepModel m;
    m.mode = Mode::unsupervised;
    m.q = q;
    m.layers = {s};
    m.states = {random_state(s, 8, rng)};
    const Matrix y = uniform(8, 3, rng);
    const auto d = deep_elbo(y, m);
    const auto e = shallow_elbo(y, m.states[0], s, psi_stats_closed(s.kernel, m.states[0].x_mean, m.states[0].x_cov_diag,
                                                                     m.states[0].inducing));
    EXPECT_NEAR(d.total, e.total, 1e-10);
    EXPECT_NEAR(d.per_layer[0].h_star, e.h_star, 1e-10);
    EXPECT_NEAR(d.kl_z_star, e.kl_x_star, 1e-10);
  }
}

TEST(DeepElbo, GaussianPathTwoLayers) {
  for (Mode mode : {Mode::unsupervised, Mode::supervised}) {
    std::mt19937_64 rng(2);
    const long n = 7;
    const auto m = two_layer(n, 2.0, mode, rng);
    const Matrix y = uniform(n, 3, rng);
    const Matrix inputs = uniform(n, 2, rng);
    const auto d = deep_elbo(y, m, &inputs);

    const auto& s0 = m.layers[0];
    const auto& s1 = m.layers[1];
    const auto& st0 = m.states[0];
    const auto& st1 = m.states[1];
    const auto g0 = gaussian_path(y, st0, s0, psi_stats_closed(s0.kernel, st0.x_mean, st0.x_cov_diag, st0.inducing));
    const Matrix top_mean = mode == Mode::supervised ? inputs : st1.x_mean;
    const Matrix top_var = mode == Mode::supervised ? Matrix::Zero(n, 2) : st1.x_cov_diag;
    const auto g1 = gaussian_path(st0.x_mean, st1, s1, psi_stats_closed(s1.kernel, top_mean, top_var, st1.inducing),
                                  &st0.x_cov_diag);
    const double entropy = 0.5 * st0.x_cov_diag.array().log().sum() + 0.5 * static_cast<double>(st0.x_cov_diag.size());
    double expect = g0.h - g0.kl_u + g1.h - g1.kl_u + entropy;
    if (mode == Mode::unsupervised) expect -= g1.kl_x;
    EXPECT_NEAR(d.per_layer[1].h_star, g1.h, 1e-8);
    EXPECT_NEAR(d.per_layer[1].entropy, entropy, 1e-10);
    EXPECT_NEAR(d.total, expect, 1e-8);
    if (mode == Mode::supervised) {
      EXPECT_EQ(d.kl_z_star, 0.0);
    }
  }
}

TEST(DeepElbo, GradientsMatchFiniteDifferences) {
  for (auto f : {KernelFamily::se_ard, KernelFamily::matern32_ard}) {
    for (double q : {1.0, 2.0}) {
      for (Mode mode : {Mode::unsupervised, Mode::supervised}) {
        std::mt19937_64 rng(3);
        const auto m = two_layer(6, q, mode, rng, f);
        const Matrix y = uniform(6, 3, rng);
        const Matrix inputs = uniform(6, 2, rng);
        const auto obj = deep_objective(m, y, &inputs, 11);
        const auto r = check_gradient(obj, model_params(m));
        EXPECT_LT(r.max_rel, 1e-4) << family_name(f) << " q=" << q << " worst " << r.worst_field;
      }
    }
  }
}

TEST(DeepElbo, ClassificationGradients) {
  std::mt19937_64 rng(4);
  auto m = two_layer(6, 1.0, Mode::supervised, rng);
  m.likelihood = Likelihood::classification;
  const Matrix y = (Matrix(6, 1) << 0, 1, 2, 2, 1, 0).finished();
  const Matrix inputs = uniform(6, 2, rng);
  const auto e = deep_elbo(y, m, &inputs, 5);
  EXPECT_TRUE(std::isfinite(e.total));
  EXPECT_LT(e.per_layer[0].h_star, 0.0);
  const auto r = check_gradient(deep_objective(m, y, &inputs, 5), model_params(m));
  EXPECT_LT(r.max_rel, 1e-4) << r.worst_field;
  const Matrix bad = (Matrix(6, 1) << 0, 1, 3, 2, 1, 0).finished();
  EXPECT_THROW(deep_elbo(bad, m, &inputs), DataError);
}

TEST(DeepElbo, ShapeErrors) {
  std::mt19937_64 rng(5);
  auto m = two_layer(6, 1.0, Mode::supervised, rng);
  const Matrix y = uniform(6, 3, rng);
  EXPECT_THROW(deep_elbo(y, m), std::invalid_argument);
  const Matrix wrong = uniform(6, 3, rng);
  EXPECT_THROW(deep_elbo(y, m, &wrong), std::invalid_argument);
  m.layers[1].out_dim = 3;
  const Matrix inputs = uniform(6, 2, rng);
  EXPECT_THROW(deep_elbo(y, m, &inputs), std::invalid_argument);
}

TEST(DeepPredict, DeterministicAndShaped) {
  std::mt19937_64 rng(6);
  const auto m = two_layer(5, 1.0, Mode::supervised, rng);
  const Matrix xt = uniform(4, 2, rng);
  std::mt19937_64 a(9), b(9);
  const auto p1 = deep_predict(m, xt, 20, a);
  const auto p2 = deep_predict(m, xt, 20, b);
  ASSERT_EQ(p1.samples.size(), 20u);
  EXPECT_EQ(p1.mean.rows(), 4);
  EXPECT_EQ(p1.mean.cols(), 3);
  EXPECT_EQ((p1.mean - p2.mean).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(p1.stddev.minCoeff(), 0.0);
  std::mt19937_64 c(1);
  EXPECT_THROW(deep_predict(m, xt, 0, c), std::invalid_argument);
}

TEST(DeepPredict, SingleLayerMatchesClosedForm) {
  std::mt19937_64 rng(7);
  const auto s = layer_spec(2, 2, 4, 2.0);
  DeepModel m;
  m.q = 2.0;
  m.layers = {s};
  auto st = random_state(s, 3, rng);
  st.x_mean.resize(0, 0);
  st.x_cov_diag.resize(0, 0);
  m.states = {st};
  const Matrix xt = uniform(3, 2, rng);
  std::mt19937_64 draw(8);
  const long n_samples = 10000;
  const auto p = deep_predict(m, xt, n_samples, draw);
  const auto closed = predict_q_f(st, s, xt);
  Matrix emp = Matrix::Zero(3, 2), emp_sq = Matrix::Zero(3, 2);
  for (const auto& x : p.samples) {
    emp += x;
    emp_sq += x.cwiseAbs2();
  }
  emp /= n_samples;
  emp_sq /= n_samples;
  for (long i = 0; i < 3; ++i) {
    for (long d = 0; d < 2; ++d) {
      const double v = closed.cov[d](i, i) + 1.0 / s.beta;  // q(F) marginal plus layer noise
      EXPECT_NEAR(p.mean(i, d), closed.mean(i, d), 1e-10);
      EXPECT_NEAR(p.stddev(i, d) * p.stddev(i, d), v, 1e-10);
      // the raw draws agree with those moments
      EXPECT_LT(std::abs(emp(i, d) - closed.mean(i, d)), 3 * std::sqrt(v / n_samples));
      EXPECT_NEAR(emp_sq(i, d) - emp(i, d) * emp(i, d), v, 0.05 * v);
    }
  }
}

TEST(DeepPredict, ScaleMomentsForQ1) {
  std::mt19937_64 rng(12);
  auto s = layer_spec(2, 2, 4, 1.0);
  DeepModel m;
  m.q = 1.0;
  m.layers = {s};
  auto st = random_state(s, 3, rng);
  st.x_mean.resize(0, 0);
  st.x_cov_diag.resize(0, 0);
  m.states = {st};
  const Matrix xt = uniform(2, 2, rng);
  std::mt19937_64 draw(3);
  const long n_samples = 40000;
  const auto p = deep_predict(m, xt, n_samples, draw);
  Matrix emp = Matrix::Zero(2, 2), emp_sq = Matrix::Zero(2, 2);
  for (const auto& x : p.samples) {
    emp += x;
    emp_sq += x.cwiseAbs2();
  }
  emp /= n_samples;
  emp_sq /= n_samples;
  const Matrix v = emp_sq - emp.cwiseAbs2();
  for (long i = 0; i < 2; ++i)
    for (long d = 0; d < 2; ++d) EXPECT_NEAR(v(i, d), p.stddev(i, d) * p.stddev(i, d), 0.05 * v(i, d));
}

TEST(DeepPredict, ClassificationProbabilities) {
  std::mt19937_64 rng(9);
  auto m = two_layer(5, 1.0, Mode::supervised, rng);
  m.likelihood = Likelihood::classification;
  const Matrix xt = uniform(4, 2, rng);
  const auto p = deep_predict(m, xt, 30, rng);
  for (long i = 0; i < 4; ++i) EXPECT_NEAR(p.mean.row(i).sum(), 1.0, 1e-12);
  EXPECT_GE(p.mean.minCoeff(), 0.0);
}

TEST(MakeModel, ShapesAndChainedInit) {
  std::mt19937_64 rng(10);
  const Matrix y = uniform(30, 4, rng);
  ModelOptions o;
  o.mode = Mode::unsupervised;
  o.num_layers = 2;
  o.latent_dim = 2;
  o.num_inducing = 8;
  o.q = 1.0;
  const auto m = make_model(y, nullptr, o);
  ASSERT_EQ(m.num_layers(), 2);
  EXPECT_EQ(m.layers[0].in_dim, 2);
  EXPECT_EQ(m.layers[0].out_dim, 4);
  EXPECT_EQ(m.layers[1].out_dim, 2);
  EXPECT_EQ(m.states[1].x_mean.rows(), 30);
  EXPECT_NEAR(m.states[0].x_mean.col(0).squaredNorm() / 30.0, 1.0, 1e-9);
  EXPECT_TRUE(std::isfinite(deep_elbo(y, m).total));

  const Matrix x = uniform(30, 1, rng);
  ModelOptions s;
  s.num_layers = 2;
  s.num_inducing = 8;
  const auto ms = make_model(y, &x, s);
  EXPECT_EQ(ms.layers[0].in_dim, 1);  // hidden width min(input width, 2)
  EXPECT_EQ(ms.states[1].x_mean.size(), 0);
  EXPECT_EQ((ms.states[0].x_mean - x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Fit, ZeroIterationsAndImprovement) {
  std::mt19937_64 rng(11);
  const long n = 25;
  const Matrix x = uniform(n, 1, rng, -2, 2);
  Matrix y(n, 1);
  for (long i = 0; i < n; ++i) y(i, 0) = std::sin(2 * x(i, 0));
  ModelOptions o;
  o.num_layers = 2;
  o.num_inducing = 8;
  o.q = 1.0;
  const auto m = make_model(y, &x, o);
  OptimConfig cfg;
  cfg.iterations = 0;
  const auto none = fit(y, m, &x, cfg);
  EXPECT_EQ((none.model.states[0].u_mean - m.states[0].u_mean).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(none.elbo_trace.empty());
  cfg.iterations = 150;
  const auto r = fit(y, m, &x, cfg);
  ASSERT_EQ(r.elbo_trace.size(), 150u);
  EXPECT_GT(deep_elbo(y, r.model, &x).total, deep_elbo(y, m, &x).total);
}

}  // namespace
