#pragma once

// Datasets: synthetic generators, CSV ingestion, splits and standardization.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qepdx/errors.hpp"
#include "qepdx/linalg.hpp"

namespace qepdx {

/// Per-column affine map z = (v - mean) / scale.
struct Standardization {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardization identity(long cols) {
    return {Eigen::RowVectorXd::Zero(cols), Eigen::RowVectorXd::Ones(cols)};
  }
  static Standardization fit(const Matrix& v) {
    Standardization s{v.colwise().mean(), Eigen::RowVectorXd::Ones(v.cols())};
    if (v.rows() > 1) {
      for (long j = 0; j < v.cols(); ++j) {
        const double sd = std::sqrt((v.col(j).array() - s.mean(j)).square().sum() / (v.rows() - 1));
        if (sd > 0) s.scale(j) = sd;
      }
    }
    return s;
  }
  Matrix apply(const Matrix& v) const { return (v.rowwise() - mean).array().rowwise() / scale.array(); }
  Matrix invert(const Matrix& z) const { return (z.array().rowwise() * scale.array()).rowwise() + mean.array(); }
};

/// Raw data plus the train/test split. `y` holds regression targets, or for
/// classification one integer label per row. Latent-variable datasets keep the
/// observations in `y`, leave `x` empty and may carry reference `labels`.
struct Dataset {
  std::string name;
  Matrix x;
  Matrix y;
  bool classification = false;
  std::vector<int> labels;
  std::vector<long> train;
  std::vector<long> test;

  bool latent() const { return x.size() == 0; }
  long num_classes() const {
    if (!classification) return 0;
    return static_cast<long>(y.maxCoeff()) + 1;
  }
};

inline Matrix take_rows(const Matrix& m, const std::vector<long>& idx) {
  Matrix out(static_cast<long>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<long>(i)) = m.row(idx[i]);
  return out;
}

/// Seeded shuffle; the first round(fraction·N) rows train, the rest test.
inline void split_rows(Dataset& d, double train_fraction, unsigned long seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("split_fraction must lie in (0, 1]");
  const long n = d.y.rows();
  std::vector<long> idx(n);
  std::iota(idx.begin(), idx.end(), 0L);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const long n_train = std::lround(train_fraction * n);
  if (n_train >= n) throw DataError("split leaves an empty test set", 0);
  if (n_train < 1) throw DataError("split leaves an empty training set", 0);
  d.train.assign(idx.begin(), idx.begin() + n_train);
  d.test.assign(idx.begin() + n_train, idx.end());
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.test.begin(), d.test.end());
}

// ---- generators ---------------------------------------------------------------------

inline double u_jump(double t) {
  if (t >= 0.0 && t <= 1.0) return 1.0;
  if (t > 1.0 && t <= 1.5) return 0.5;
  if (t > 1.5 && t <= 2.0) return 2.0;
  return 0.0;
}

inline double u_turn(double t) {
  if (t >= 0.0 && t <= 1.0) return 1.5 * t;
  if (t > 1.0 && t <= 1.5) return 3.5 - 2.0 * t;
  if (t > 1.5 && t <= 2.0) return 3.0 * t - 4.0;
  return 0.0;
}

/// 100 noisy training points on [0,2] (σ = 0.1) followed by 50 noise-free test points.
inline Dataset gen_timeseries(unsigned long seed) {
  constexpr long n_train = 100, n_test = 50;
  constexpr double sigma = 0.1;
  Dataset d;
  d.name = "timeseries";
  d.x.resize(n_train + n_test, 1);
  d.y.resize(n_train + n_test, 2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (long i = 0; i < n_train + n_test; ++i) {
    const bool tr = i < n_train;
    const double t = tr ? 2.0 * i / (n_train - 1) : 2.0 * (i - n_train) / (n_test - 1);
    d.x(i, 0) = t;
    d.y(i, 0) = u_jump(t);
    d.y(i, 1) = u_turn(t);
    if (tr) {
      d.y(i, 0) += noise(rng);
      d.y(i, 1) += noise(rng);
      d.train.push_back(i);
    } else {
      d.test.push_back(i);
    }
  }
  return d;
}

/// Class of x on the annular rhombus for a given u: round-half-even(cos(0.4uπ‖x‖₁)) + 1.
inline int rhombus_label(double x1, double x2, double u) {
  const double c = std::cos(0.4 * u * std::numbers::pi * (std::abs(x1) + std::abs(x2)));
  return static_cast<int>(std::nearbyint(c)) + 1;
}

/// One u ~ Unif[0,1] per dataset, x ~ N(0, I₂); 80/20 seeded split. u is redrawn
/// until each of the three classes holds at least 5% of the points.
inline Dataset gen_rhombus(unsigned long seed, long n = 500, double train_fraction = 0.8) {
  Dataset d;
  d.name = "rhombus";
  d.classification = true;
  d.x.resize(n, 2);
  d.y.resize(n, 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long i = 0; i < n; ++i) {
    d.x(i, 0) = normal(rng);
    d.x(i, 1) = normal(rng);
  }
  for (int attempt = 0;; ++attempt) {
    const double u = unif(rng);
    long counts[3] = {0, 0, 0};
    for (long i = 0; i < n; ++i) {
      d.y(i, 0) = rhombus_label(d.x(i, 0), d.x(i, 1), u);
      ++counts[static_cast<int>(d.y(i, 0))];
    }
    const long least = std::min({counts[0], counts[1], counts[2]});
    if (20 * least >= n || attempt == 1000) break;
  }
  split_rows(d, train_fraction, seed + 1);
  return d;
}

/// Three labeled clusters of 1000 points in 12 dimensions. Clusters live in a
/// random 4-dimensional subspace (unit within-cluster std, centers 6 apart)
/// plus small isotropic noise.
inline Dataset gen_clusters(unsigned long seed) {
  constexpr long n = 1000, d_obs = 12, d_sub = 4, k = 3;
  constexpr double separation = 6.0, noise_sd = 0.1;
  Dataset d;
  d.name = "clusters";
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d_obs, d_sub);
  for (long i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Matrix basis = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(d_obs, d_sub);
  // equilateral triangle in the first two subspace coordinates
  Matrix centers = Matrix::Zero(k, d_sub);
  for (long c = 0; c < k; ++c) {
    const double a = 2.0 * std::numbers::pi * c / k;
    centers(c, 0) = separation / std::sqrt(3.0) * std::cos(a);
    centers(c, 1) = separation / std::sqrt(3.0) * std::sin(a);
  }
  d.y.resize(n, d_obs);
  d.labels.resize(n);
  for (long i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % k);
    Eigen::RowVectorXd z = centers.row(c);
    for (long j = 0; j < d_sub; ++j) z(j) += normal(rng);
    d.y.row(i) = z * basis.transpose();
    for (long j = 0; j < d_obs; ++j) d.y(i, j) += noise_sd * normal(rng);
    d.labels[i] = c;
  }
  d.train.resize(n);
  std::iota(d.train.begin(), d.train.end(), 0L);
  return d;
}

// ---- CSV ----------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Reads a rectangular numeric CSV with a header row. Row numbers in errors are
/// 1-based file lines.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path, 0);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file " + path, 1);
  for (auto& h : split_csv_line(line)) t.header.push_back(trim(h));
  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw DataError("row has " + std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(t.header.size()),
                      line_no);
    }
    std::vector<double> r;
    for (const auto& c : cells) {
      const std::string v = trim(c);
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (v.empty() || used != v.size() || !std::isfinite(x)) throw DataError("non-numeric cell '" + v + "'", line_no);
      r.push_back(x);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("no data rows in " + path, line_no);
  t.values.resize(static_cast<long>(rows.size()), static_cast<long>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  return t;
}

/// Splits the table into features and target columns (named or 0-based indices),
/// then shuffles into train/test.
inline Dataset load_csv(const std::string& path, const std::vector<std::string>& targets, double train_fraction,
                        unsigned long seed, bool classification = false) {
  const auto t = read_csv(path);
  std::vector<long> tcols;
  for (const auto& name : targets) {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    long c = -1;
    if (it != t.header.end()) {
      c = it - t.header.begin();
    } else {
      try {
        std::size_t used = 0;
        c = std::stol(name, &used);
        if (used != name.size()) c = -1;
      } catch (const std::exception&) {
        c = -1;
      }
    }
    if (c < 0 || c >= static_cast<long>(t.header.size())) throw ConfigError("unknown target column '" + name + "'");
    tcols.push_back(c);
  }
  if (tcols.empty()) tcols.push_back(static_cast<long>(t.header.size()) - 1);
  Dataset d;
  d.name = path;
  d.classification = classification;
  const long n = t.values.rows();
  d.y.resize(n, static_cast<long>(tcols.size()));
  std::vector<long> fcols;
  for (long j = 0; j < t.values.cols(); ++j)
    if (std::find(tcols.begin(), tcols.end(), j) == tcols.end()) fcols.push_back(j);
  d.x.resize(n, static_cast<long>(fcols.size()));
  for (long i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < tcols.size(); ++j) d.y(i, static_cast<long>(j)) = t.values(i, tcols[j]);
    for (std::size_t j = 0; j < fcols.size(); ++j) d.x(i, static_cast<long>(j)) = t.values(i, fcols[j]);
  }
  if (classification) {
    if (d.y.cols() != 1) throw ConfigError("classification needs exactly one target column");
    for (long i = 0; i < n; ++i) {
      const double v = d.y(i, 0);
      if (v < 0 || v != std::floor(v)) throw DataError("labels must be non-negative integers", i + 2);
    }
  }
  split_rows(d, train_fraction, seed);
  return d;
}

inline void write_dataset_csv(const Dataset& d, std::ostream& os) {
  os.precision(17);
  std::vector<std::string> cols;
  for (long j = 0; j < d.x.cols(); ++j) cols.push_back("x" + std::to_string(j));
  for (long j = 0; j < d.y.cols(); ++j) cols.push_back(d.classification ? "label" : "y" + std::to_string(j));
  if (!d.labels.empty()) cols.push_back("label");
  cols.push_back("test");
  for (std::size_t j = 0; j < cols.size(); ++j) os << (j ? "," : "") << cols[j];
  os << "\n";
  std::vector<char> is_test(d.y.rows(), 0);
  for (long i : d.test) is_test[i] = 1;
  for (long i = 0; i < d.y.rows(); ++i) {
    bool first = true;
    auto put = [&](double v) {
      os << (first ? "" : ",") << v;
      first = false;
    };
    for (long j = 0; j < d.x.cols(); ++j) put(d.x(i, j));
    for (long j = 0; j < d.y.cols(); ++j) put(d.y(i, j));
    if (!d.labels.empty()) put(d.labels[i]);
    put(is_test[i]);
    os << "\n";
  }
}

}  // namespace qepdx
