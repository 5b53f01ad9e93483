#pragma once

// Reverse-mode differentiation over dense matrices. Every node holds a full
// matrix value; backward closures push adjoints to their parents. Scalars are
// 1×1 matrices. A Tape is single-threaded and owned by one evaluation.

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qepdx/errors.hpp"
#include "qepdx/linalg.hpp"

namespace qepdx::ad {

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  friend class Tape;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& adj, const Matrix& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) { return push(std::move(v), false, nullptr); }
  Var constant(double v) { return constant(Matrix::Constant(1, 1, v)); }
  Var variable(Matrix v) { return push(std::move(v), true, nullptr); }
  Var variable(double v) { return variable(Matrix::Constant(1, 1, v)); }

  /// Records an op. The backward closure runs only if some parent needs a gradient.
  Var op(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape_ != this) throw std::logic_error("ad: mixing tapes");
      needs = needs || nodes_[p.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Matrix& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }

  /// Adds `delta` to the adjoint of `v` (no-op for constants).
  void accumulate(const Var& v, const Matrix& delta) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (!n.has_adj) {
      n.adj = delta;
      n.has_adj = true;
    } else {
      n.adj += delta;
    }
  }

  void backward(const Var& out) {
    if (out.tape_ != this) throw std::logic_error("ad: backward on foreign var");
    if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("ad: backward needs a scalar");
    for (Node& n : nodes_) n.has_adj = false;
    accumulate(out, Matrix::Ones(1, 1));
    for (std::size_t i = out.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_adj || !n.backward) continue;
      n.backward(*this, n.adj, n.value);
    }
  }

  /// Adjoint after backward(); zeros when nothing flowed into v.
  Matrix grad(const Var& v) const {
    const Node& n = nodes_[v.id_];
    if (!n.has_adj) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.adj;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix adj;
    bool requires_grad = false;
    bool has_adj = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, false, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("ad::") + what + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}
inline void is_scalar(const Var& a, const char* what) {
  if (a.rows() != 1 || a.cols() != 1) throw std::invalid_argument(std::string("ad::") + what + ": expected 1x1");
}
}  // namespace detail

// ---- linear ops -------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  return a.tape()->op(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var operator-(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  return a.tape()->op(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var operator*(const Var& a, double s) {
  return a.tape()->op(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}
inline Var operator*(double s, const Var& a) { return a * s; }
inline Var operator-(const Var& a) { return a * -1.0; }

/// Elementwise a + c.
inline Var add_const(const Var& a, double c) {
  return a.tape()->op((a.value().array() + c).matrix(), {a},
                      [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g); });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ad::matmul: inner dimension mismatch");
  return a.tape()->op(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }

/// aᵀ b without materializing the transpose node.
inline Var matmul_tn(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("ad::matmul_tn: dimension mismatch");
  return a.tape()->op(a.value().transpose() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, b.value() * g.transpose());
    if (b.requires_grad()) t.accumulate(b, a.value() * g);
  });
}

inline Var transpose(const Var& a) {
  return a.tape()->op(a.value().transpose(), {a},
                      [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g.transpose()); });
}

/// Elementwise product.
inline Var cmul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "cmul");
  return a.tape()->op(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

/// a · s for a 1×1 variable s.
inline Var scale_by(const Var& a, const Var& s) {
  detail::is_scalar(s, "scale_by");
  const double sv = s.scalar();
  return a.tape()->op(a.value() * sv, {a, s}, [a, s, sv](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g * sv);
    if (s.requires_grad()) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
  });
}

/// diag(v) · a for v of length a.rows() (column vector).
inline Var scale_rows(const Var& a, const Var& v) {
  if (v.cols() != 1 || v.rows() != a.rows()) throw std::invalid_argument("ad::scale_rows: bad vector");
  return a.tape()->op(v.value().col(0).asDiagonal() * a.value(), {a, v}, [a, v](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, v.value().col(0).asDiagonal() * g);
    if (v.requires_grad()) t.accumulate(v, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

/// a · diag(v) for v of length a.cols() (row vector).
inline Var scale_cols(const Var& a, const Var& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) throw std::invalid_argument("ad::scale_cols: bad vector");
  return a.tape()->op(a.value() * v.value().row(0).asDiagonal(), {a, v}, [a, v](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g * v.value().row(0).asDiagonal());
    if (v.requires_grad()) t.accumulate(v, g.cwiseProduct(a.value()).colwise().sum());
  });
}

/// a + c·I
inline Var add_diag(const Var& a, double c) {
  if (a.rows() != a.cols()) throw std::invalid_argument("ad::add_diag: not square");
  Matrix v = a.value();
  v.diagonal().array() += c;
  return a.tape()->op(std::move(v), {a}, [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g); });
}

/// a + s·c·I for a 1×1 variable s.
inline Var add_diag_scaled(const Var& a, const Var& s, double c) {
  if (a.rows() != a.cols()) throw std::invalid_argument("ad::add_diag_scaled: not square");
  detail::is_scalar(s, "add_diag_scaled");
  Matrix v = a.value();
  v.diagonal().array() += c * s.scalar();
  return a.tape()->op(std::move(v), {a, s}, [a, s, c](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (s.requires_grad()) t.accumulate(s, Matrix::Constant(1, 1, c * g.trace()));
  });
}

/// Square matrix with v (a column or row vector) on the diagonal.
inline Var diag_embed(const Var& v) {
  if (v.rows() != 1 && v.cols() != 1) throw std::invalid_argument("ad::diag_embed: expected a vector");
  const bool column = v.cols() == 1;
  const Eigen::Index n = v.value().size();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) d(i, i) = v.value().data()[i];
  return v.tape()->op(std::move(d), {v}, [v, column, n](Tape& t, const Matrix& g, const Matrix&) {
    Matrix out = column ? Matrix(n, 1) : Matrix(1, n);
    for (Eigen::Index i = 0; i < n; ++i) out.data()[i] = g(i, i);
    t.accumulate(v, out);
  });
}

/// Stacks each row of a `times` times consecutively: row (i·times + s) = a_i.
inline Var repeat_rows(const Var& a, Eigen::Index times) {
  const Eigen::Index n = a.rows();
  Matrix v(n * times, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) v.middleRows(i * times, times).rowwise() = a.value().row(i);
  return a.tape()->op(std::move(v), {a}, [a, n, times](Tape& t, const Matrix& g, const Matrix&) {
    Matrix out(n, g.cols());
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = g.middleRows(i * times, times).colwise().sum();
    t.accumulate(a, out);
  });
}

/// Averages consecutive groups of `group` rows (inverse layout of repeat_rows).
inline Var block_mean_rows(const Var& a, Eigen::Index group) {
  if (group < 1 || a.rows() % group != 0) throw std::invalid_argument("ad::block_mean_rows: bad group");
  const Eigen::Index n = a.rows() / group;
  Matrix v(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) v.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  return a.tape()->op(std::move(v), {a}, [a, n, group](Tape& t, const Matrix& g, const Matrix&) {
    Matrix out(n * group, g.cols());
    const double w = 1.0 / static_cast<double>(group);
    for (Eigen::Index i = 0; i < n; ++i) out.middleRows(i * group, group).rowwise() = g.row(i) * w;
    t.accumulate(a, out);
  });
}

// ---- reductions -------------------------------------------------------------

inline Var sum(const Var& a) {
  return a.tape()->op(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var trace(const Var& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("ad::trace: not square");
  return a.tape()->op(Matrix::Constant(1, 1, a.value().trace()), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Identity(a.rows(), a.cols()) * g(0, 0));
  });
}

/// Squared Frobenius norm.
inline Var squared_norm(const Var& a) {
  return a.tape()->op(Matrix::Constant(1, 1, a.value().squaredNorm()), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, 2.0 * g(0, 0) * a.value());
  });
}

/// tr(aᵀ b) = Σ a∘b
inline Var dot(const Var& a, const Var& b) {
  detail::same_shape(a, b, "dot");
  return a.tape()->op(Matrix::Constant(1, 1, a.value().cwiseProduct(b.value()).sum()), {a, b},
                      [a, b](Tape& t, const Matrix& g, const Matrix&) {
                        if (a.requires_grad()) t.accumulate(a, g(0, 0) * b.value());
                        if (b.requires_grad()) t.accumulate(b, g(0, 0) * a.value());
                      });
}

inline Var row_sum(const Var& a) {
  return a.tape()->op(a.value().rowwise().sum(), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g.col(0).replicate(1, a.cols()));
  });
}

inline Var col_sum(const Var& a) {
  return a.tape()->op(a.value().colwise().sum(), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g.row(0).replicate(a.rows(), 1));
  });
}

// ---- elementwise maps -------------------------------------------------------

/// Elementwise f with derivative df(x, f(x)).
template <class F, class DF>
Var map(const Var& a, F f, DF df) {
  Matrix v = a.value().unaryExpr(f);
  Matrix d = a.value().binaryExpr(v, df);
  return a.tape()->op(std::move(v), {a}, [a, d = std::move(d)](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g.cwiseProduct(d));
  });
}

inline Var exp(const Var& a) {
  return map(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(const Var& a) {
  return map(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var sqrt(const Var& a) {
  return map(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}
inline Var square(const Var& a) {
  return map(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var pow(const Var& a, double p) {
  return map(a, [p](double x) { return std::pow(x, p); },
             [p](double x, double) { return p * std::pow(x, p - 1.0); });
}
/// max(a, floor) elementwise; the gradient is cut where the floor is active.
inline Var clamp_min(const Var& a, double floor) {
  return map(a, [floor](double x) { return x < floor ? floor : x; },
             [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

// ---- kernels ----------------------------------------------------------------

/// D[n, m] = Σ_j w_j (a[n, j] - b[m, j])² for a weight row vector w ≥ 0.
inline Var weighted_sqdist(const Var& a, const Var& b, const Var& w) {
  const Eigen::Index n = a.rows(), m = b.rows(), q = a.cols();
  if (b.cols() != q || w.rows() != 1 || w.cols() != q) {
    throw std::invalid_argument("ad::weighted_sqdist: dimension mismatch");
  }
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Matrix& wv = w.value();
  Matrix d = Matrix::Zero(n, m);
  for (Eigen::Index j = 0; j < q; ++j) {
    const double wj = wv(0, j);
    for (Eigen::Index c = 0; c < m; ++c) {
      const double bj = bv(c, j);
      for (Eigen::Index r = 0; r < n; ++r) {
        const double diff = av(r, j) - bj;
        d(r, c) += wj * diff * diff;
      }
    }
  }
  return a.tape()->op(std::move(d), {a, b, w}, [a, b, w](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const Matrix& wv = w.value();
    const Vector rs = g.rowwise().sum();
    const Vector cs = g.colwise().sum().transpose();
    const Matrix gb = g * bv;             // n × q
    const Matrix gta = g.transpose() * av;  // m × q
    if (a.requires_grad()) {
      Matrix ga = 2.0 * (rs.asDiagonal() * av - gb);
      t.accumulate(a, ga * wv.row(0).asDiagonal());
    }
    if (b.requires_grad()) {
      Matrix gbb = 2.0 * (cs.asDiagonal() * bv - gta);
      t.accumulate(b, gbb * wv.row(0).asDiagonal());
    }
    if (w.requires_grad()) {
      Matrix gw(1, av.cols());
      for (Eigen::Index j = 0; j < av.cols(); ++j) {
        gw(0, j) = rs.dot(av.col(j).cwiseAbs2()) + cs.dot(bv.col(j).cwiseAbs2()) -
                   2.0 * av.col(j).dot(gb.col(j));
      }
      t.accumulate(w, gw);
    }
  });
}

/// Matérn-3/2 shape (1 + √3 d) exp(-√3 d) as a function of d² (smooth at d = 0).
inline Var matern32_of_sqdist(const Var& d2) {
  constexpr double s3 = 1.7320508075688772;
  return map(
      d2,
      [](double x) {
        const double d = std::sqrt(x > 0.0 ? x : 0.0);
        return (1.0 + s3 * d) * std::exp(-s3 * d);
      },
      [](double x, double) {
        const double d = std::sqrt(x > 0.0 ? x : 0.0);
        return -1.5 * std::exp(-s3 * d);
      });
}

// ---- factorizations ---------------------------------------------------------

/// Lower Cholesky factor with the module-wide jitter retry. The retry shift is
/// treated as a constant.
inline Var cholesky(const Var& a, const std::string& what = "matrix") {
  auto res = linalg::cholesky(linalg::symmetrize(a.value()), what);
  return a.tape()->op(std::move(res.factor), {a}, [a](Tape& t, const Matrix& lbar, const Matrix& l) {
    // Ā = ½ L⁻ᵀ (P + Pᵀ) L⁻¹ with P = Φ(Lᵀ L̄), Φ = lower triangle with halved diagonal.
    Matrix p = (l.transpose() * lbar.triangularView<Eigen::Lower>().toDenseMatrix())
                   .triangularView<Eigen::Lower>();
    p.diagonal() *= 0.5;
    Matrix s = p + p.transpose();
    s = linalg::solve_lower_t(l, s);
    s = linalg::solve_lower_t(l, s.transpose().eval()).transpose();
    t.accumulate(a, 0.5 * linalg::symmetrize(s));
  });
}

/// L⁻¹ B for lower-triangular L.
inline Var solve_lower(const Var& l, const Var& b) {
  if (l.rows() != l.cols() || l.cols() != b.rows()) throw std::invalid_argument("ad::solve_lower: dimension mismatch");
  return l.tape()->op(linalg::solve_lower(l.value(), b.value()), {l, b},
                      [l, b](Tape& t, const Matrix& g, const Matrix& c) {
                        const Matrix gb = linalg::solve_lower_t(l.value(), g);
                        if (b.requires_grad()) t.accumulate(b, gb);
                        if (l.requires_grad()) {
                          t.accumulate(l, -(gb * c.transpose()).triangularView<Eigen::Lower>().toDenseMatrix());
                        }
                      });
}

/// L⁻ᵀ B for lower-triangular L.
inline Var solve_lower_t(const Var& l, const Var& b) {
  if (l.rows() != l.cols() || l.cols() != b.rows()) throw std::invalid_argument("ad::solve_lower_t: dimension mismatch");
  return l.tape()->op(linalg::solve_lower_t(l.value(), b.value()), {l, b},
                      [l, b](Tape& t, const Matrix& g, const Matrix& c) {
                        // C = L⁻ᵀ B  ⇒  B̄ = L⁻¹ C̄,  L̄ = -tril(C B̄ᵀ)
                        const Matrix gb = linalg::solve_lower(l.value(), g);
                        if (b.requires_grad()) t.accumulate(b, gb);
                        if (l.requires_grad()) {
                          t.accumulate(l, -(c * gb.transpose()).triangularView<Eigen::Lower>().toDenseMatrix());
                        }
                      });
}

/// log|L Lᵀ| = 2 Σ log L_ii
inline Var log_det_chol(const Var& l) {
  if (l.rows() != l.cols()) throw std::invalid_argument("ad::log_det_chol: not square");
  return l.tape()->op(Matrix::Constant(1, 1, linalg::log_det_from_factor(l.value())), {l},
                      [l](Tape& t, const Matrix& g, const Matrix&) {
                        Matrix d = Matrix::Zero(l.rows(), l.cols());
                        d.diagonal() = 2.0 * g(0, 0) * l.value().diagonal().cwiseInverse();
                        t.accumulate(l, d);
                      });
}

/// Number of packed entries of an m×m lower triangle.
inline Eigen::Index packed_size(Eigen::Index m) { return m * (m + 1) / 2; }

/// m×m lower-triangular factor from a packed row-major column vector whose
/// diagonal entries are log-transformed: L_ii = exp(p), L_ij = p (i > j).
inline Var tri_from_packed(const Var& packed, Eigen::Index m) {
  if (packed.cols() != 1 || packed.rows() != packed_size(m)) {
    throw std::invalid_argument("ad::tri_from_packed: packed size mismatch");
  }
  Matrix l = Matrix::Zero(m, m);
  const Matrix& p = packed.value();
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++k) l(i, j) = (i == j) ? std::exp(p(k, 0)) : p(k, 0);
  return packed.tape()->op(std::move(l), {packed}, [packed, m](Tape& t, const Matrix& g, const Matrix& l) {
    Matrix out(packed_size(m), 1);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j <= i; ++j, ++k) out(k, 0) = (i == j) ? g(i, j) * l(i, j) : g(i, j);
    t.accumulate(packed, out);
  });
}

// ---- likelihood helpers -----------------------------------------------------

/// Row-wise log-softmax evaluated at integer labels: out[i] = log softmax(a_i)[labels[i]].
inline Var log_softmax_pick(const Var& a, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != a.rows()) {
    throw std::invalid_argument("ad::log_softmax_pick: label count mismatch");
  }
  const Matrix& v = a.value();
  Matrix prob(v.rows(), v.cols());
  Matrix out(v.rows(), 1);
  std::vector<int> lab(labels.begin(), labels.end());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    if (lab[i] < 0 || lab[i] >= v.cols()) throw std::invalid_argument("ad::log_softmax_pick: label out of range");
    const double mx = v.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (v.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    prob.row(i) = e / z;
    out(i, 0) = v(i, lab[i]) - mx - std::log(z);
  }
  return a.tape()->op(std::move(out), {a}, [a, prob = std::move(prob), lab = std::move(lab)](
                                               Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = -prob;
    for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, lab[i]) += 1.0;
    t.accumulate(a, g.col(0).asDiagonal() * d);
  });
}

}  // namespace qepdx::ad
