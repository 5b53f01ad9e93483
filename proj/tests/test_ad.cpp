#include <gtest/gtest.h>

#include <random>

#include "fd_oracle.hpp"
#include "qepdx/ad.hpp"

namespace {

using qepdx::Matrix;
using qepdx::ad::Tape;
using qepdx::ad::Var;
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Matrix spd(Eigen::Index n, std::mt19937_64& rng) {
  Matrix a = random_matrix(n, n, rng);
  return a * a.transpose() + n * Matrix::Identity(n, n);
}

// Reduces an arbitrary-shaped output to a scalar with a fixed random weighting so
// every Jacobian entry is exercised.
double check(const Builder& build, const std::vector<Matrix>& inputs, double step = 1e-6) {
  std::mt19937_64 rng(99);
  Matrix weight;
  auto reduce = [&](Tape& t, const Var& out) {
    if (weight.size() == 0) weight = random_matrix(out.rows(), out.cols(), rng);
    return qepdx::ad::dot(out, t.constant(weight));
  };
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  Var y = reduce(tape, build(tape, vars));
  tape.backward(y);

  auto f = [&](const std::vector<Matrix>& at) {
    Tape t;
    std::vector<Var> v;
    for (const auto& m : at) v.push_back(t.constant(m));
    return reduce(t, build(t, v)).scalar();
  };
  const auto fd = qepdx::testing::central_differences(f, inputs, step);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    worst = std::max(worst, qepdx::testing::max_rel_error(tape.grad(vars[k]), fd[k], 1e-6));
  }
  return worst;
}

namespace ad = qepdx::ad;

TEST(Ad, LinearOps) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng), c = random_matrix(3, 4, rng);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return v[0] * v[1]; }, {a, b}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::matmul_tn(v[0], v[1]); }, {a, c}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::cmul(v[0], v[1]) - 2.0 * v[0]; }, {a, c}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::transpose(v[0]) + v[1]; },
                  {a, random_matrix(4, 3, rng)}),
            1e-7);
}

TEST(Ad, BroadcastAndReductions) {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(5, 3, rng);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::scale_rows(v[0], v[1]); },
                  {a, random_matrix(5, 1, rng)}),
            1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::scale_cols(v[0], v[1]); },
                  {a, random_matrix(1, 3, rng)}),
            1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::scale_by(v[0], v[1]); },
                  {a, random_matrix(1, 1, rng)}),
            1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::row_sum(v[0]); }, {a}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::col_sum(v[0]); }, {a}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::squared_norm(v[0]); }, {a}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::repeat_rows(v[0], 3); }, {a}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::block_mean_rows(v[0], 2); },
                  {random_matrix(6, 2, rng)}),
            1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::diag_embed(v[0]); }, {random_matrix(3, 1, rng)}),
            1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::add_diag_scaled(v[0], v[1], 0.3); },
                  {random_matrix(3, 3, rng), random_matrix(1, 1, rng)}),
            1e-7);
}

TEST(Ad, ElementwiseMaps) {
  std::mt19937_64 rng(3);
  const Matrix pos = random_matrix(3, 3, rng, 0.5, 2.0);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::exp(v[0]); }, {pos}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::log(v[0]); }, {pos}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::sqrt(v[0]); }, {pos}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::pow(v[0], 0.7); }, {pos}), 1e-7);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::matern32_of_sqdist(v[0]); }, {pos}), 1e-7);
}

TEST(Ad, WeightedSquaredDistance) {
  std::mt19937_64 rng(4);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::weighted_sqdist(v[0], v[1], v[2]); },
                  {random_matrix(4, 2, rng), random_matrix(3, 2, rng), random_matrix(1, 2, rng, 0.2, 2.0)}),
            1e-7);
}

TEST(Ad, CholeskyAndSolves) {
  std::mt19937_64 rng(5);
  const Matrix a = spd(4, rng);
  const Matrix b = random_matrix(4, 2, rng);
  // symmetric input perturbations: feed (X + Xᵀ)/2 so FD respects symmetry
  auto sym = [](const Var& x) { return 0.5 * (x + ad::transpose(x)); };
  EXPECT_LT(check([&](Tape&, const std::vector<Var>& v) { return ad::cholesky(sym(v[0])); }, {a}), 1e-6);
  EXPECT_LT(check([&](Tape&, const std::vector<Var>& v) { return ad::log_det_chol(ad::cholesky(sym(v[0]))); }, {a}),
            1e-6);
  EXPECT_LT(check([&](Tape&, const std::vector<Var>& v) { return ad::solve_lower(ad::cholesky(sym(v[0])), v[1]); },
                  {a, b}),
            1e-6);
  EXPECT_LT(check([&](Tape&, const std::vector<Var>& v) { return ad::solve_lower_t(ad::cholesky(sym(v[0])), v[1]); },
                  {a, b}),
            1e-6);
}

TEST(Ad, PackedTriangleAndSoftmax) {
  std::mt19937_64 rng(6);
  EXPECT_LT(check([](Tape&, const std::vector<Var>& v) { return ad::tri_from_packed(v[0], 3); },
                  {random_matrix(6, 1, rng)}),
            1e-7);
  const std::vector<int> labels = {0, 2, 1, 1};
  EXPECT_LT(check([&](Tape&, const std::vector<Var>& v) { return ad::log_softmax_pick(v[0], labels); },
                  {random_matrix(4, 3, rng)}),
            1e-7);
}

TEST(Ad, ConstantsGetNoGradient) {
  Tape t;
  Var x = t.variable(2.0);
  Var c = t.constant(3.0);
  Var y = ad::scale_by(x, c);
  t.backward(ad::sum(y));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(t.grad(c)(0, 0), 0.0);
}

TEST(Ad, RejectsShapeMismatch) {
  Tape t;
  Var a = t.variable(Matrix::Zero(2, 2));
  Var b = t.variable(Matrix::Zero(3, 2));
  EXPECT_THROW(a + b, std::invalid_argument);
  EXPECT_THROW(a * b, std::invalid_argument);
  EXPECT_THROW(t.backward(a), std::invalid_argument);
}

}  // namespace
