#include <gtest/gtest.h>

#include <random>

#include "qepdx/kernels.hpp"

namespace {

using qepdx::KernelFamily;
using qepdx::KernelSpec;
using qepdx::Matrix;
using qepdx::Vector;

Matrix uniform(long r, long c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

KernelSpec spec(KernelFamily f, double alpha, Vector gamma) {
  KernelSpec k;
  k.family = f;
  k.alpha = alpha;
  k.gamma = std::move(gamma);
  return k;
}

// Direct double loop over the ARD formulas.
double kernel_direct(const KernelSpec& k, const Vector& x, const Vector& y) {
  double d2 = 0.0, lin = 0.0;
  for (long j = 0; j < x.size(); ++j) {
    d2 += k.gamma[j] * (x[j] - y[j]) * (x[j] - y[j]);
    lin += k.gamma[j] * x[j] * y[j];
  }
  switch (k.family) {
    case KernelFamily::se_ard: return std::exp(-0.5 * d2) / k.alpha;
    case KernelFamily::matern32_ard: {
      const double d = std::sqrt(3.0 * d2);
      return (1.0 + d) * std::exp(-d) / k.alpha;
    }
    case KernelFamily::linear_ard: return lin / k.alpha;
  }
  return 0.0;
}

TEST(Gram, HandValues) {
  auto k = spec(KernelFamily::se_ard, 1.0, Vector::Ones(2));
  Matrix a = Matrix::Zero(1, 2), b = Matrix::Ones(1, 2);
  EXPECT_NEAR(qepdx::gram(k, a, b)(0, 0), 0.367879441171, 1e-12);
  k.gamma = Vector::Zero(2);
  k.alpha = 4.0;
  std::mt19937_64 rng(1);
  const Matrix x = uniform(5, 2, rng), y = uniform(3, 2, rng);
  EXPECT_TRUE(qepdx::gram(k, x, y).isApprox(Matrix::Constant(5, 3, 0.25)));
  k.jitter = 0.0;
  EXPECT_TRUE(qepdx::gram(k, x).diagonal().isApprox(Vector::Constant(5, 0.25)));
}

TEST(Gram, MatchesDirectLoopAllFamilies) {
  std::mt19937_64 rng(2);
  for (auto f : {KernelFamily::se_ard, KernelFamily::linear_ard, KernelFamily::matern32_ard}) {
    const auto k = spec(f, 0.7, (Vector(3) << 0.5, 2.0, 0.1).finished());
    const Matrix a = uniform(4, 3, rng), b = uniform(6, 3, rng);
    const Matrix g = qepdx::gram(k, a, b);
    for (long n = 0; n < 4; ++n)
      for (long m = 0; m < 6; ++m)
        EXPECT_NEAR(g(n, m), kernel_direct(k, a.row(n).transpose(), b.row(m).transpose()), 1e-13);
  }
}

TEST(Gram, JitterOnlyOnSquareCall) {
  std::mt19937_64 rng(3);
  auto k = spec(KernelFamily::se_ard, 2.0, Vector::Ones(2));
  k.jitter = 0.1;
  const Matrix a = uniform(3, 2, rng);
  const Matrix copy = a;
  EXPECT_NEAR(qepdx::gram(k, a)(1, 1), 0.5 + 0.05, 1e-14);
  EXPECT_NEAR(qepdx::gram(k, a, copy)(1, 1), 0.5, 1e-14);
}

TEST(Gram, DimensionMismatchThrows) {
  const auto k = spec(KernelFamily::se_ard, 1.0, Vector::Ones(2));
  EXPECT_THROW(qepdx::gram(k, Matrix::Zero(2, 3), Matrix::Zero(2, 2)), std::invalid_argument);
  auto bad = k;
  bad.alpha = 0.0;
  EXPECT_THROW(qepdx::gram(bad, Matrix::Zero(2, 2)), std::invalid_argument);
  bad = k;
  bad.gamma[0] = -1.0;
  EXPECT_THROW(qepdx::gram(bad, Matrix::Zero(2, 2)), std::invalid_argument);
}

TEST(Gram, PositiveDefiniteOnRandomPoints) {
  std::mt19937_64 rng(4);
  for (auto f : {KernelFamily::se_ard, KernelFamily::matern32_ard}) {
    for (long n : {10, 100, 500}) {
      const auto k = spec(f, 1.3, (Vector(2) << 0.8, 1.5).finished());
      const Matrix x = uniform(n, 2, rng, -3, 3);
      const Matrix g = qepdx::gram(k, x);
      EXPECT_TRUE(g.isApprox(g.transpose(), 0.0));
      EXPECT_NO_THROW(qepdx::linalg::cholesky(g));
    }
  }
}

TEST(Gram, ArdMonotonicity) {
  std::mt19937_64 rng(5);
  const Matrix x = uniform(6, 2, rng);
  const Matrix copy = x;
  auto k = spec(KernelFamily::se_ard, 1.0, (Vector(2) << 0.5, 0.5).finished());
  const Matrix before = qepdx::gram(k, x, copy);
  k.gamma[1] = 1.5;
  const Matrix after = qepdx::gram(k, x, copy);
  for (long i = 0; i < 6; ++i)
    for (long j = 0; j < 6; ++j)
      if (i != j) EXPECT_LE(after(i, j), before(i, j));
}

TEST(PsiClosed, SePsi0AndZeroVarianceLimit) {
  std::mt19937_64 rng(6);
  const auto k = spec(KernelFamily::se_ard, 2.0, (Vector(2) << 0.3, 1.1).finished());
  const Matrix mu = uniform(7, 2, rng), z = uniform(3, 2, rng);
  const auto p = qepdx::psi_stats_closed(k, mu, Matrix::Zero(7, 2), z, true);
  EXPECT_NEAR(p.psi0, 3.5, 1e-15);
  const Matrix g = qepdx::gram(k, mu, z);
  EXPECT_LT((p.psi1 - g).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((p.psi2 - g.transpose() * g).cwiseAbs().maxCoeff(), 1e-12);
  ASSERT_EQ(p.per_point_psi2.size(), 7u);
  Matrix total = Matrix::Zero(3, 3);
  for (const auto& m : p.per_point_psi2) total += m;
  EXPECT_LT((total - p.psi2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PsiClosed, SeApproximationHandValue) {
  const auto k = spec(KernelFamily::se_ard, 1.0, (Vector(1) << 2.0).finished());
  Matrix mu(1, 1), s(1, 1), z(2, 1);
  mu << 0.5;
  s << 0.1;
  z << 0.0, 1.0;
  const auto p = qepdx::psi_stats_closed(k, mu, s, z);
  const double t = 0.2, d0 = 2.0 * 0.25, d1 = 2.0 * 0.25;
  EXPECT_NEAR(p.psi1(0, 0), std::exp(-0.5 * (d0 + t)), 1e-14);
  EXPECT_NEAR(p.psi2(0, 1), std::exp(-0.5 * (d0 + d1 + t)), 1e-14);
}

TEST(PsiClosed, LinearZeroVarianceAndHandValues) {
  std::mt19937_64 rng(7);
  const auto k = spec(KernelFamily::linear_ard, 0.5, (Vector(2) << 0.3, 1.1).finished());
  const Matrix mu = uniform(5, 2, rng), z = uniform(4, 2, rng), s = uniform(5, 2, rng, 0.1, 0.5);
  const auto p0 = qepdx::psi_stats_closed(k, mu, Matrix::Zero(5, 2), z);
  EXPECT_LT((p0.psi1 - qepdx::gram(k, mu, z)).cwiseAbs().maxCoeff(), 1e-12);
  const auto p = qepdx::psi_stats_closed(k, mu, s, z, true);
  double psi0 = 0.0;
  Matrix psi2 = Matrix::Zero(4, 4);
  for (long n = 0; n < 5; ++n) {
    Matrix second = mu.row(n).transpose() * mu.row(n);
    second.diagonal() += s.row(n).transpose();
    psi0 += (k.gamma.asDiagonal() * second).trace() / k.alpha;
    psi2 += z * k.gamma.asDiagonal() * second * k.gamma.asDiagonal() * z.transpose() / (k.alpha * k.alpha);
  }
  EXPECT_NEAR(p.psi0, psi0, 1e-12);
  EXPECT_LT((p.psi2 - psi2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PsiClosed, MaternUnsupported) {
  const auto k = spec(KernelFamily::matern32_ard, 1.0, Vector::Ones(1));
  EXPECT_THROW(qepdx::psi_stats_closed(k, Matrix::Zero(2, 1), Matrix::Ones(2, 1), Matrix::Zero(1, 1)),
               qepdx::UnsupportedFamily);
}

TEST(PsiMc, DegenerateVarianceGivesExactKernel) {
  std::mt19937_64 rng(8), data(9);
  for (auto f : {KernelFamily::se_ard, KernelFamily::linear_ard, KernelFamily::matern32_ard}) {
    const auto k = spec(f, 1.5, (Vector(2) << 0.3, 1.1).finished());
    const Matrix mu = uniform(4, 2, data), z = uniform(3, 2, data);
    const auto p = qepdx::psi_stats_mc(k, mu, Matrix::Zero(4, 2), z, 1, 1.0, rng);
    EXPECT_LT((p.psi1 - qepdx::gram(k, mu, z)).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_THROW(qepdx::psi_stats_mc(spec(KernelFamily::se_ard, 1, Vector::Ones(1)), Matrix::Zero(1, 1),
                                   Matrix::Ones(1, 1), Matrix::Zero(1, 1), 0, 1.0, rng),
               std::invalid_argument);
}

TEST(PsiMc, DeterministicGivenSeed) {
  std::mt19937_64 data(10);
  const auto k = spec(KernelFamily::matern32_ard, 1.0, Vector::Ones(2));
  const Matrix mu = uniform(4, 2, data), s = uniform(4, 2, data, 0.1, 0.3), z = uniform(3, 2, data);
  std::mt19937_64 a(3), b(3);
  const auto p = qepdx::psi_stats_mc(k, mu, s, z, 50, 1.0, a);
  const auto r = qepdx::psi_stats_mc(k, mu, s, z, 50, 1.0, b);
  EXPECT_EQ((p.psi2 - r.psi2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((p.psi1 - r.psi1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PsiMc, LinearAgreesWithClosedFormGaussian) {
  std::mt19937_64 data(11), rng(12);
  const auto k = spec(KernelFamily::linear_ard, 0.8, (Vector(2) << 0.6, 1.4).finished());
  const Matrix mu = uniform(6, 2, data), s = uniform(6, 2, data, 0.2, 0.6), z = uniform(3, 2, data);
  const auto closed = qepdx::psi_stats_closed(k, mu, s, z);
  const auto mc = qepdx::psi_stats_mc(k, mu, s, z, 100000, 2.0, rng);
  EXPECT_LT((mc.psi2 - closed.psi2).norm() / closed.psi2.norm(), 0.01);
  EXPECT_LT((mc.psi1 - closed.psi1).norm() / closed.psi1.norm(), 0.01);
  EXPECT_NEAR(mc.psi0, closed.psi0, 0.01 * closed.psi0);
}

TEST(PsiMc, LinearAgreesAtQOneWithMomentScaling) {
  // q-ED second moments are covariance_scaling(Q, q)·S_n, which the closed form sees
  // through an inflated variance.
  std::mt19937_64 data(13), rng(14);
  const auto k = spec(KernelFamily::linear_ard, 1.0, (Vector(2) << 0.6, 1.4).finished());
  const Matrix mu = uniform(5, 2, data), s = uniform(5, 2, data, 0.2, 0.6), z = uniform(3, 2, data);
  const auto closed = qepdx::psi_stats_closed(k, mu, s * qepdx::covariance_scaling(2, 1.0), z);
  const auto mc = qepdx::psi_stats_mc(k, mu, s, z, 100000, 1.0, rng);
  EXPECT_LT((mc.psi2 - closed.psi2).norm() / closed.psi2.norm(), 0.01);
}

TEST(PsiMc, Psi2IsPsdAndPerPointSums) {
  std::mt19937_64 data(15), rng(16);
  const auto k = spec(KernelFamily::matern32_ard, 1.0, Vector::Ones(3));
  const Matrix mu = uniform(8, 3, data), s = uniform(8, 3, data, 0.01, 0.2), z = uniform(5, 3, data);
  const auto p = qepdx::psi_stats_mc(k, mu, s, z, 20, 1.0, rng, true);
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.psi2);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * p.psi2.trace());
  Matrix total = Matrix::Zero(5, 5);
  for (const auto& m : p.per_point_psi2) total += m;
  EXPECT_LT((total - p.psi2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(p.psi0, 8.0, 1e-14);
}

}  // namespace
