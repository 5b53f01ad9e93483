#pragma once

// Central finite differences over every entry of a set of input matrices.
// Test-only: independent of the reverse-mode path it checks.

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace qepdx::testing {

using Matrix = Eigen::MatrixXd;

inline std::vector<Matrix> central_differences(
    const std::function<double(const std::vector<Matrix>&)>& f, std::vector<Matrix> at,
    double step = 1e-6) {
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < at.size(); ++k) {
    Matrix g(at[k].rows(), at[k].cols());
    for (Eigen::Index i = 0; i < at[k].size(); ++i) {
      const double x0 = at[k].data()[i];
      at[k].data()[i] = x0 + step;
      const double fp = f(at);
      at[k].data()[i] = x0 - step;
      const double fm = f(at);
      at[k].data()[i] = x0;
      g.data()[i] = (fp - fm) / (2.0 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_error(const Matrix& a, const Matrix& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    const double d = std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace qepdx::testing
