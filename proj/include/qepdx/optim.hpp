#pragma once

// Flat unconstrained parameter vectors, gradients through the AD tape, a
// central-difference validator and Adam.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qepdx/ad.hpp"
#include "qepdx/errors.hpp"

namespace qepdx {

enum class Transform {
  identity,
  log,         // stored as log(v), v > 0
  packed_tri,  // m×m lower factor stored packed row-major with log diagonal
};

struct ParamBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;  // shape of the constrained value
  Transform transform = Transform::identity;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;  // raw entries
};

class ParamVector {
 public:
  void add(const std::string& name, const Matrix& value, Transform t) {
    if (index_.count(name)) throw std::invalid_argument("ParamVector: duplicate block " + name);
    ParamBlock b{name, value.rows(), value.cols(), t, raw_.size(), 0};
    const Vector packed = to_raw(b, value);
    b.size = packed.size();
    raw_.conservativeResize(raw_.size() + b.size);
    raw_.segment(b.offset, b.size) = packed;
    index_[name] = blocks_.size();
    blocks_.push_back(b);
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const ParamBlock& block(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamVector: no block " + name);
    return blocks_[it->second];
  }

  /// Constrained value of a block.
  Matrix get(const std::string& name) const {
    const ParamBlock& b = block(name);
    return from_raw(b, raw_.segment(b.offset, b.size));
  }

  void set(const std::string& name, const Matrix& value) {
    const ParamBlock& b = block(name);
    if (value.rows() != b.rows || value.cols() != b.cols) throw std::invalid_argument("ParamVector: shape change for " + name);
    raw_.segment(b.offset, b.size) = to_raw(b, value);
  }

  const Vector& raw() const { return raw_; }
  Vector& raw() { return raw_; }
  const std::vector<ParamBlock>& schema() const { return blocks_; }
  Eigen::Index size() const { return raw_.size(); }

  /// Block owning raw index i.
  const ParamBlock& block_at(Eigen::Index i) const {
    for (const auto& b : blocks_)
      if (i >= b.offset && i < b.offset + b.size) return b;
    throw std::out_of_range("ParamVector: index out of range");
  }

 private:
  static Vector to_raw(const ParamBlock& b, const Matrix& v) {
    switch (b.transform) {
      case Transform::identity:
        return Eigen::Map<const Vector>(v.data(), v.size());
      case Transform::log: {
        if (!(v.array() > 0.0).all()) throw std::invalid_argument("ParamVector: " + b.name + " must be positive");
        const Matrix l = v.array().log().matrix();
        return Eigen::Map<const Vector>(l.data(), l.size());
      }
      case Transform::packed_tri: {
        if (v.rows() != v.cols()) throw std::invalid_argument("ParamVector: " + b.name + " must be square");
        if (!(v.diagonal().array() > 0.0).all()) {
          throw std::invalid_argument("ParamVector: " + b.name + " needs a positive diagonal");
        }
        Vector out(ad::packed_size(v.rows()));
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < v.rows(); ++i)
          for (Eigen::Index j = 0; j <= i; ++j, ++k) out[k] = (i == j) ? std::log(v(i, j)) : v(i, j);
        return out;
      }
    }
    return {};
  }

  static Matrix from_raw(const ParamBlock& b, const Vector& r) {
    switch (b.transform) {
      case Transform::identity:
        return Eigen::Map<const Matrix>(r.data(), b.rows, b.cols);
      case Transform::log:
        return Eigen::Map<const Matrix>(r.data(), b.rows, b.cols).array().exp().matrix();
      case Transform::packed_tri: {
        Matrix l = Matrix::Zero(b.rows, b.rows);
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < b.rows; ++i)
          for (Eigen::Index j = 0; j <= i; ++j, ++k) l(i, j) = (i == j) ? std::exp(r[k]) : r[k];
        return l;
      }
    }
    return {};
  }

  std::vector<ParamBlock> blocks_;
  std::map<std::string, std::size_t> index_;
  Vector raw_;
};

/// Tape nodes for every block: raw (what the gradient is taken against) and
/// constrained (what model code consumes).
class BlockVars {
 public:
  const ad::Var& operator[](const std::string& name) const {
    auto it = constrained_.find(name);
    if (it == constrained_.end()) throw std::invalid_argument("BlockVars: no block " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return constrained_.count(name) > 0; }
  const ad::Var& raw(const std::string& name) const { return raw_.at(name); }

  static BlockVars bind(ad::Tape& t, const ParamVector& p, bool track) {
    BlockVars out;
    for (const auto& b : p.schema()) {
      const Vector seg = p.raw().segment(b.offset, b.size);
      ad::Var r;
      switch (b.transform) {
        case Transform::identity:
        case Transform::log: {
          Matrix m = Eigen::Map<const Matrix>(seg.data(), b.rows, b.cols);
          r = track ? t.variable(std::move(m)) : t.constant(std::move(m));
          out.constrained_[b.name] = b.transform == Transform::log ? ad::exp(r) : r;
          break;
        }
        case Transform::packed_tri: {
          Matrix m = seg;
          r = track ? t.variable(std::move(m)) : t.constant(std::move(m));
          out.constrained_[b.name] = ad::tri_from_packed(r, b.rows);
          break;
        }
      }
      out.raw_[b.name] = r;
    }
    return out;
  }

 private:
  std::map<std::string, ad::Var> constrained_;
  std::map<std::string, ad::Var> raw_;
};

/// Scalar loss to minimize. `step` lets stochastic objectives derive per-iteration
/// noise deterministically; deterministic objectives ignore it.
using Objective = std::function<ad::Var(ad::Tape&, const BlockVars&, long step)>;

struct Evaluation {
  double value = 0.0;
  Vector grad;
};

inline double evaluate(const Objective& f, const ParamVector& p, long step = 0) {
  ad::Tape t;
  const auto vars = BlockVars::bind(t, p, false);
  const ad::Var y = f(t, vars, step);
  if (y.rows() != 1 || y.cols() != 1) throw std::invalid_argument("objective must be scalar");
  return y.scalar();
}

inline Evaluation gradient(const Objective& f, const ParamVector& p, long step = 0) {
  ad::Tape t;
  const auto vars = BlockVars::bind(t, p, true);
  const ad::Var y = f(t, vars, step);
  if (!std::isfinite(y.scalar())) throw GradientFailure("loss", "gradient: non-finite loss");
  t.backward(y);
  Evaluation e{y.scalar(), Vector(p.size())};
  for (const auto& b : p.schema()) {
    const Matrix g = t.grad(vars.raw(b.name));
    if (!g.allFinite()) throw GradientFailure(b.name, "gradient: non-finite derivative");
    e.grad.segment(b.offset, b.size) = Eigen::Map<const Vector>(g.data(), g.size());
  }
  return e;
}

struct GradientReport {
  double max_rel = 0.0;
  double mean_rel = 0.0;
  std::string worst_field;
  Eigen::Index worst_index = -1;
  std::map<std::string, double> per_block_max;
  Vector analytic;
  Vector numeric;
};

/// Relative error per entry |a - f| / max(|a|, |f|, floor) with floor tied to the
/// gradient's overall scale so near-zero entries do not dominate.
inline GradientReport compare_gradients(const ParamVector& p, const Vector& analytic, const Vector& numeric) {
  GradientReport r;
  r.analytic = analytic;
  r.numeric = numeric;
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  const double floor = std::max(1e-8, 1e-6 * scale);
  double total = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], f = numeric[i];
    const double e = std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
    total += e;
    const std::string& name = p.block_at(i).name;
    r.per_block_max[name] = std::max(r.per_block_max[name], e);
    if (e > r.max_rel || r.worst_index < 0) {
      r.max_rel = std::max(r.max_rel, e);
      r.worst_field = name;
      r.worst_index = i;
    }
  }
  r.mean_rel = analytic.size() ? total / analytic.size() : 0.0;
  return r;
}

inline Vector finite_differences(const Objective& f, ParamVector p, double step = 1e-5, long at_step = 0) {
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double x0 = p.raw()[i];
    p.raw()[i] = x0 + step;
    const double fp = evaluate(f, p, at_step);
    p.raw()[i] = x0 - step;
    const double fm = evaluate(f, p, at_step);
    p.raw()[i] = x0;
    out[i] = (fp - fm) / (2.0 * step);
  }
  return out;
}

inline GradientReport check_gradient(const Objective& f, const ParamVector& at, double step = 1e-5) {
  const Evaluation e = gradient(f, at);
  return compare_gradients(at, e.grad, finite_differences(f, at, step));
}

struct OptimConfig {
  double step_size = 0.01;
  long iterations = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  unsigned long seed = 0;
  std::optional<double> gradient_clip;

  void validate() const {
    if (!(step_size > 0.0)) throw std::invalid_argument("OptimConfig: step_size must be > 0");
    if (iterations < 0) throw std::invalid_argument("OptimConfig: iterations must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("OptimConfig: beta1, beta2 must lie in (0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("OptimConfig: eps must be > 0");
    if (gradient_clip && !(*gradient_clip > 0.0)) throw std::invalid_argument("OptimConfig: gradient_clip must be > 0");
  }
};

struct MinimizeResult {
  ParamVector params;
  std::vector<double> trace;  // loss before each update; NaN for failed steps
};

inline constexpr int kMaxBadSteps = 10;

/// Adam on f. A step whose loss or gradient is not finite (or whose
/// factorizations fail) leaves the parameters untouched; kMaxBadSteps of them in
/// a row raise TrainingDiverged.
inline MinimizeResult minimize(const Objective& f, const ParamVector& init, const OptimConfig& cfg,
                               const std::function<void(long, double)>& on_step = {}) {
  cfg.validate();
  MinimizeResult res{init, {}};
  res.trace.reserve(cfg.iterations);
  Vector m = Vector::Zero(init.size()), v = Vector::Zero(init.size());
  int bad = 0;
  long t = 0;
  for (long it = 0; it < cfg.iterations; ++it) {
    Evaluation e;
    bool ok = true;
    try {
      e = gradient(f, res.params, it);
    } catch (const NumericalFailure&) {
      ok = false;
    }
    if (!ok) {
      res.trace.push_back(std::numeric_limits<double>::quiet_NaN());
      if (++bad >= kMaxBadSteps) {
        throw TrainingDiverged("minimize: " + std::to_string(kMaxBadSteps) + " consecutive non-finite steps");
      }
      continue;
    }
    bad = 0;
    res.trace.push_back(e.value);
    if (on_step) on_step(it, e.value);
    if (cfg.gradient_clip) {
      const double n = e.grad.norm();
      if (n > *cfg.gradient_clip) e.grad *= *cfg.gradient_clip / n;
    }
    ++t;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * e.grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * e.grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    res.params.raw().array() -=
        cfg.step_size * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
  return res;
}

}  // namespace qepdx
