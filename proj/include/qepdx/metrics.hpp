#pragma once

// Test-set metrics: MAE / STD / NLL for regression, ACC / macro AUC / NLL for
// classification.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "qepdx/errors.hpp"
#include "qepdx/qed.hpp"

namespace qepdx {

struct Metrics {
  std::optional<double> mae, std, nll, acc, auc;
  std::optional<double> dispersion;  // latent-variable runs
};

/// Predictive marginals given as mean and stddev per entry. NLL treats each test
/// point as a D-dimensional q-ED whose covariance matches the predictive
/// variances, i.e. scale C = diag(stddev²) / covariance_scaling(D, q).
inline Metrics regression_metrics(const Matrix& y, const Matrix& mean, const Matrix& stddev, double q) {
  if (y.rows() != mean.rows() || y.cols() != mean.cols() || stddev.rows() != y.rows() || stddev.cols() != y.cols()) {
    throw DataError("regression_metrics: prediction shape does not match targets");
  }
  if (y.size() == 0) throw DataError("regression_metrics: empty test set");
  const Matrix err = (y - mean).cwiseAbs();
  const double n = static_cast<double>(err.size());
  Metrics m;
  m.mae = err.mean();
  m.std = n > 1 ? std::sqrt((err.array() - *m.mae).square().sum() / (n - 1)) : 0.0;
  const long d = y.cols();
  const double s = covariance_scaling(d, q);
  double nll = 0.0;
  for (long i = 0; i < y.rows(); ++i) {
    const Vector sd = (stddev.row(i).transpose().array() / std::sqrt(s)).max(1e-12).matrix();
    const QedParams p(mean.row(i).transpose(), sd.asDiagonal().toDenseMatrix(), q);
    nll -= log_density(y.row(i).transpose(), p);
  }
  m.nll = nll / static_cast<double>(y.rows());
  return m;
}

/// Area under the ROC curve via the rank-sum statistic; ties get average ranks.
/// Returns NaN when one of the two groups is empty.
inline double binary_auc(const std::vector<double>& score, const std::vector<int>& positive) {
  const std::size_t n = score.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double n_pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      n_pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// probs: T×K class probabilities. AUC is the unweighted one-vs-rest mean over
/// classes present in the test labels (and absent from at least one row).
inline Metrics classification_metrics(const std::vector<int>& labels, const Matrix& probs) {
  const long t = probs.rows(), k = probs.cols();
  if (static_cast<long>(labels.size()) != t) throw DataError("classification_metrics: label count mismatch");
  if (t == 0) throw DataError("classification_metrics: empty test set");
  double correct = 0.0, nll = 0.0;
  for (long i = 0; i < t; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw DataError("label outside the training classes", i + 1);
    long best = 0;
    probs.row(i).maxCoeff(&best);
    correct += best == labels[i] ? 1.0 : 0.0;
    nll -= std::log(std::max(probs(i, labels[i]), 1e-300));
  }
  double auc_sum = 0.0;
  long auc_n = 0;
  for (long c = 0; c < k; ++c) {
    std::vector<double> score(t);
    std::vector<int> pos(t);
    for (long i = 0; i < t; ++i) {
      score[i] = probs(i, c);
      pos[i] = labels[i] == c;
    }
    const double a = binary_auc(score, pos);
    if (std::isfinite(a)) {
      auc_sum += a;
      ++auc_n;
    }
  }
  Metrics m;
  m.acc = correct / static_cast<double>(t);
  m.nll = nll / static_cast<double>(t);
  if (auc_n > 0) m.auc = auc_sum / static_cast<double>(auc_n);
  return m;
}

/// Mean within-class spread of latent points over their total spread (both as
/// mean squared distance to the relevant centroid).
inline double dispersion_ratio(const Matrix& z, const std::vector<int>& labels) {
  if (static_cast<long>(labels.size()) != z.rows()) throw DataError("dispersion_ratio: label count mismatch");
  const Eigen::RowVectorXd centre = z.colwise().mean();
  const double total = (z.rowwise() - centre).squaredNorm();
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  Matrix sums = Matrix::Zero(k, z.cols());
  Vector counts = Vector::Zero(k);
  for (long i = 0; i < z.rows(); ++i) {
    sums.row(labels[i]) += z.row(i);
    counts(labels[i]) += 1.0;
  }
  double within = 0.0;
  for (long i = 0; i < z.rows(); ++i) within += (z.row(i) - sums.row(labels[i]) / counts(labels[i])).squaredNorm();
  return total > 0 ? within / total : 0.0;
}

}  // namespace qepdx
