#pragma once

// Experiment plumbing behind the CLI: config, dataset assembly, training,
// evaluation, checkpoints and latent export.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qepdx/data.hpp"
#include "qepdx/deep.hpp"
#include "qepdx/metrics.hpp"

namespace qepdx {

struct ExperimentConfig {
  // data
  std::string source = "timeseries";  // timeseries | rhombus | clusters | path to a CSV file
  unsigned long seed = 0;
  std::optional<double> split_fraction;  // default 0.9 for CSV, 0.8 for rhombus; the time series has a fixed grid
  std::vector<std::string> target_columns;
  std::string task = "regression";    // CSV only: regression | classification
  // model
  std::string type = "deep_qep";      // gp | qep | deep_gp | deep_qep
  double q = 1.0;
  long layers = 0;                    // 0: 1 for gp/qep, 2 for deep types
  std::vector<long> hidden_widths;
  std::string kernel = "matern";
  double nu = 1.5;
  long num_inducing = 32;
  long latent_dim = 2;
  // inference
  long mc_samples = kDefaultMaternDraws;
  long predict_samples = 200;
  // optim
  long iterations = 1000;
  double step_size = 0.01;
  std::optional<double> gradient_clip;
  // output
  std::string checkpoint = "model.json";
  std::string metrics = "metrics.json";
  std::string trace = "trace.csv";
  std::string latent = "latent.csv";
  bool timing = false;
  // bench
  std::vector<std::string> bench_models;  // empty: model.type only
  long bench_seeds = 10;

  bool deep() const { return type == "deep_gp" || type == "deep_qep"; }
  bool gaussian() const { return type == "gp" || type == "deep_gp"; }
  double effective_q() const { return gaussian() ? 2.0 : q; }
  long depth() const { return layers > 0 ? layers : (deep() ? 2 : 1); }
};

// ---- config file --------------------------------------------------------------------

namespace config_detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline long to_long(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != std::floor(x)) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return static_cast<long>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace config_detail

/// Applies one `key = value` setting. Unknown keys are errors.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using namespace config_detail;
  const std::string& v = value;
  if (key == "data.source") c.source = v;
  else if (key == "data.seed") c.seed = static_cast<unsigned long>(to_long(key, v));
  else if (key == "data.split_fraction") c.split_fraction = to_double(key, v);
  else if (key == "data.target_columns") c.target_columns = split_list(v);
  else if (key == "data.task") c.task = v;
  else if (key == "model.type") c.type = v;
  else if (key == "model.q") c.q = to_double(key, v);
  else if (key == "model.layers") c.layers = to_long(key, v);
  else if (key == "model.hidden_widths") {
    c.hidden_widths.clear();
    for (const auto& w : split_list(v)) c.hidden_widths.push_back(to_long(key, w));
  } else if (key == "model.kernel.family") c.kernel = v;
  else if (key == "model.kernel.nu") c.nu = to_double(key, v);
  else if (key == "model.num_inducing") c.num_inducing = to_long(key, v);
  else if (key == "model.latent_dim") c.latent_dim = to_long(key, v);
  else if (key == "inference.mc_samples") c.mc_samples = to_long(key, v);
  else if (key == "inference.predict_samples") c.predict_samples = to_long(key, v);
  else if (key == "optim.iterations") c.iterations = to_long(key, v);
  else if (key == "optim.step_size") c.step_size = to_double(key, v);
  else if (key == "optim.gradient_clip") c.gradient_clip = to_double(key, v);
  else if (key == "output.checkpoint") c.checkpoint = v;
  else if (key == "output.metrics") c.metrics = v;
  else if (key == "output.trace") c.trace = v;
  else if (key == "output.latent") c.latent = v;
  else if (key == "output.timing") c.timing = to_bool(key, v);
  else if (key == "bench.models") c.bench_models = split_list(v);
  else if (key == "bench.seeds") c.bench_seeds = to_long(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Checks ranges and cross-field rules.
inline void validate_config(const ExperimentConfig& c, const std::map<std::string, std::string>& explicit_keys = {}) {
  static const std::vector<std::string> types{"gp", "qep", "deep_gp", "deep_qep"};
  if (std::find(types.begin(), types.end(), c.type) == types.end()) {
    throw ConfigError("model.type must be gp, qep, deep_gp or deep_qep");
  }
  if (c.gaussian() && explicit_keys.count("model.q") && c.q != 2.0) {
    throw ConfigError("model.type " + c.type + " forces q = 2");
  }
  if (!(c.q > 0.0 && c.q <= 2.0)) throw ConfigError("model.q must lie in (0, 2]");
  try {
    parse_family(c.kernel);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model.kernel.family: ") + e.what());
  }
  if (parse_family(c.kernel) == KernelFamily::matern32_ard && c.nu != 1.5) {
    throw ConfigError("model.kernel.nu: only 1.5 is supported");
  }
  if (c.layers < 0) throw ConfigError("model.layers must be >= 0");
  if (!c.deep() && c.layers > 1) throw ConfigError("model.layers > 1 needs a deep model type");
  for (long w : c.hidden_widths)
    if (w < 1) throw ConfigError("model.hidden_widths entries must be >= 1");
  if (c.num_inducing < 1) throw ConfigError("model.num_inducing must be >= 1");
  if (c.latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
  if (c.mc_samples < 1) throw ConfigError("inference.mc_samples must be >= 1");
  if (c.predict_samples < 1) throw ConfigError("inference.predict_samples must be >= 1");
  if (c.iterations < 0) throw ConfigError("optim.iterations must be >= 0");
  if (!(c.step_size > 0)) throw ConfigError("optim.step_size must be positive");
  if (c.gradient_clip && !(*c.gradient_clip > 0)) throw ConfigError("optim.gradient_clip must be positive");
  if (c.split_fraction && !(*c.split_fraction > 0.0 && *c.split_fraction <= 1.0)) throw ConfigError("data.split_fraction must lie in (0, 1]");
  for (const auto& t : c.bench_models)
    if (std::find(types.begin(), types.end(), t) == types.end()) throw ConfigError("bench.models: unknown type '" + t + "'");
  if (c.bench_seeds < 1) throw ConfigError("bench.seeds must be >= 1");
  if (c.task != "regression" && c.task != "classification") throw ConfigError("data.task must be regression or classification");
}

/// Parses `key = value` lines; '#' starts a comment.
inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::map<std::string, std::string> seen;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (seen.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    set_config_value(c, key, value);
    seen[key] = value;
  }
  validate_config(c, seen);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

// ---- datasets -----------------------------------------------------------------------

inline Dataset make_dataset(const ExperimentConfig& c) {
  if (c.source == "timeseries") return gen_timeseries(c.seed);
  if (c.source == "rhombus") return gen_rhombus(c.seed, 500, c.split_fraction.value_or(0.8));
  if (c.source == "clusters") return gen_clusters(c.seed);
  return load_csv(c.source, c.target_columns, c.split_fraction.value_or(0.9), c.seed, c.task == "classification");
}

// ---- training -----------------------------------------------------------------------

struct TrainedModel {
  ExperimentConfig config;
  DeepModel model;
  Standardization x_std;
  Standardization y_std;
  std::vector<double> elbo_trace;
  std::optional<double> wall_time_s;
};

inline ModelOptions model_options(const ExperimentConfig& c, const Dataset& d) {
  ModelOptions o;
  o.mode = d.latent() ? Mode::unsupervised : Mode::supervised;
  o.likelihood = d.classification ? Likelihood::classification : Likelihood::regression;
  o.q = c.effective_q();
  o.num_layers = c.depth();
  o.hidden_widths = c.hidden_widths;
  o.latent_dim = c.latent_dim;
  o.num_classes = d.num_classes();
  o.family = parse_family(c.kernel);
  o.num_inducing = c.num_inducing;
  o.mc_draws = c.mc_samples;
  o.seed = c.seed;
  return o;
}

inline TrainedModel train(const ExperimentConfig& c, const Dataset& d) {
  const auto start = std::chrono::steady_clock::now();
  TrainedModel out;
  out.config = c;
  const Matrix y_tr = take_rows(d.y, d.train);
  Matrix x_tr;
  if (!d.latent()) {
    x_tr = take_rows(d.x, d.train);
    out.x_std = Standardization::fit(x_tr);
    x_tr = out.x_std.apply(x_tr);
  }
  Matrix targets = y_tr;
  if (d.classification) {
    out.y_std = Standardization::identity(1);
  } else {
    out.y_std = Standardization::fit(y_tr);
    targets = out.y_std.apply(y_tr);
  }
  const Matrix* inputs = d.latent() ? nullptr : &x_tr;
  const DeepModel init = make_model(targets, inputs, model_options(c, d));
  OptimConfig oc;
  oc.iterations = c.iterations;
  oc.step_size = c.step_size;
  oc.seed = c.seed;
  oc.gradient_clip = c.gradient_clip;
  auto fitted = fit(targets, init, inputs, oc);
  out.model = std::move(fitted.model);
  out.elbo_trace = std::move(fitted.elbo_trace);
  if (c.timing) {
    out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

// ---- evaluation ---------------------------------------------------------------------

/// Dominant latent coordinates: the two largest ARD weights of the top layer.
inline std::pair<long, long> dominant_dims(const TrainedModel& t) {
  const Vector& g = t.model.layers.back().kernel.gamma;
  if (g.size() < 2) throw std::invalid_argument("latent export needs at least 2 latent dimensions");
  std::vector<long> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0L);
  std::stable_sort(idx.begin(), idx.end(), [&](long a, long b) { return g(a) > g(b); });
  return {idx[0], idx[1]};
}

inline Matrix latent_coords(const TrainedModel& t) {
  const auto [a, b] = dominant_dims(t);
  const Matrix& z = t.model.states.back().x_mean;
  Matrix out(z.rows(), 2);
  out.col(0) = z.col(a);
  out.col(1) = z.col(b);
  return out;
}

inline Metrics evaluate(const TrainedModel& t, const Dataset& d) {
  const auto& m = t.model;
  if (d.latent()) {
    if (m.mode != Mode::unsupervised) throw DataError("evaluate: latent dataset needs a latent-variable model");
    if (d.y.cols() != m.output_dim()) throw DataError("evaluate: observation width does not match the model");
    Metrics out;
    if (!d.labels.empty()) {
      std::vector<int> lab;
      for (long i : d.train) lab.push_back(d.labels[i]);
      out.dispersion = dispersion_ratio(latent_coords(t), lab);
    }
    return out;
  }
  if (m.mode != Mode::supervised) throw DataError("evaluate: supervised dataset needs a supervised model");
  if (d.x.cols() != m.input_dim()) throw DataError("evaluate: feature width does not match the model");
  if (d.test.empty()) throw DataError("evaluate: empty test set");
  const Matrix xt = t.x_std.apply(take_rows(d.x, d.test));
  const Matrix yt = take_rows(d.y, d.test);
  std::mt19937_64 rng(t.config.seed + 7919);
  const auto p = deep_predict(m, xt, t.config.predict_samples, rng);
  if (d.classification) {
    std::vector<int> lab;
    for (long i = 0; i < yt.rows(); ++i) lab.push_back(static_cast<int>(yt(i, 0)));
    return classification_metrics(lab, p.mean);
  }
  if (yt.cols() != m.output_dim()) throw DataError("evaluate: target width does not match the model");
  const Matrix mean = t.y_std.invert(p.mean);
  const Matrix sd = p.stddev.array().rowwise() * t.y_std.scale.array();
  return regression_metrics(yt, mean, sd, m.q);
}

// ---- persistence --------------------------------------------------------------------

namespace persist_detail {

using json = nlohmann::ordered_json;

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (long j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix matrix_from(const json& j) {
  const long r = j.at("rows").get<long>(), c = j.at("cols").get<long>();
  Matrix m(r, c);
  const auto& data = j.at("data");
  if (static_cast<long>(data.size()) != r) throw DataError("checkpoint: matrix row count mismatch");
  for (long i = 0; i < r; ++i) {
    if (static_cast<long>(data[i].size()) != c) throw DataError("checkpoint: matrix column count mismatch");
    for (long k = 0; k < c; ++k) m(i, k) = data[i][k].get<double>();
  }
  return m;
}

inline json vector_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from(const json& j) {
  Vector v(static_cast<long>(j.size()));
  for (long i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

inline json std_json(const Standardization& s) {
  return json{{"mean", vector_json(s.mean.transpose())}, {"scale", vector_json(s.scale.transpose())}};
}

inline Standardization std_from(const json& j) {
  return {vector_from(j.at("mean")).transpose(), vector_from(j.at("scale")).transpose()};
}

inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace persist_detail

/// Every config key with its current value, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  using persist_detail::join;
  using persist_detail::num;
  std::vector<std::pair<std::string, std::string>> e{
      {"data.source", c.source},
      {"data.seed", std::to_string(c.seed)},
      {"data.target_columns", join(c.target_columns)},
      {"data.task", c.task},
      {"model.type", c.type},
      {"model.q", num(c.q)},
      {"model.layers", std::to_string(c.layers)},
      {"model.hidden_widths", join(c.hidden_widths)},
      {"model.kernel.family", c.kernel},
      {"model.kernel.nu", num(c.nu)},
      {"model.num_inducing", std::to_string(c.num_inducing)},
      {"model.latent_dim", std::to_string(c.latent_dim)},
      {"inference.mc_samples", std::to_string(c.mc_samples)},
      {"inference.predict_samples", std::to_string(c.predict_samples)},
      {"optim.iterations", std::to_string(c.iterations)},
      {"optim.step_size", num(c.step_size)},
      {"output.checkpoint", c.checkpoint},
      {"output.metrics", c.metrics},
      {"output.trace", c.trace},
      {"output.latent", c.latent},
      {"output.timing", c.timing ? "true" : "false"},
      {"bench.models", join(c.bench_models)},
      {"bench.seeds", std::to_string(c.bench_seeds)},
  };
  if (c.split_fraction) e.insert(e.begin() + 2, {"data.split_fraction", num(*c.split_fraction)});
  if (c.gradient_clip) e.push_back({"optim.gradient_clip", num(*c.gradient_clip)});
  return e;
}

inline nlohmann::ordered_json checkpoint_json(const TrainedModel& t) {
  using namespace persist_detail;
  json cfg = json::object();
  for (const auto& [k, v] : config_entries(t.config)) cfg[k] = v;
  const auto& m = t.model;
  json layers = json::array();
  for (long l = 0; l < m.num_layers(); ++l) {
    const auto& s = m.layers[l];
    const auto& st = m.states[l];
    json chol = json::array();
    for (const auto& c : st.u_cov_chol) chol.push_back(matrix_json(c));
    layers.push_back(json{
        {"in_dim", s.in_dim},
        {"out_dim", s.out_dim},
        {"num_inducing", s.num_inducing},
        {"beta", s.beta},
        {"kernel", json{{"family", family_name(s.kernel.family)},
                        {"alpha", s.kernel.alpha},
                        {"gamma", vector_json(s.kernel.gamma)},
                        {"jitter", s.kernel.jitter}}},
        {"inducing", matrix_json(st.inducing)},
        {"u_mean", matrix_json(st.u_mean)},
        {"u_cov_chol", std::move(chol)},
        {"x_mean", matrix_json(st.x_mean)},
        {"x_cov_diag", matrix_json(st.x_cov_diag)},
    });
  }
  return json{
      {"format", "qepdx-checkpoint"},
      {"version", 1},
      {"config", std::move(cfg)},
      {"x_std", std_json(t.x_std)},
      {"y_std", std_json(t.y_std)},
      {"model", json{{"mode", m.mode == Mode::supervised ? "supervised" : "unsupervised"},
                     {"likelihood", m.likelihood == Likelihood::regression ? "regression" : "classification"},
                     {"q", m.q},
                     {"mc_draws", m.mc_draws},
                     {"layers", std::move(layers)}}},
      {"final_elbo", t.elbo_trace.empty() ? json(nullptr) : json(t.elbo_trace.back())},
      {"wall_time_s", opt(t.wall_time_s)},
  };
}

inline TrainedModel checkpoint_from(const nlohmann::ordered_json& j) {
  using namespace persist_detail;
  try {
    if (j.at("format").get<std::string>() != "qepdx-checkpoint") throw DataError("not a qepdx checkpoint");
    TrainedModel t;
    for (const auto& [k, v] : j.at("config").items()) set_config_value(t.config, k, v.get<std::string>());
    validate_config(t.config);
    t.x_std = std_from(j.at("x_std"));
    t.y_std = std_from(j.at("y_std"));
    const auto& jm = j.at("model");
    auto& m = t.model;
    m.mode = jm.at("mode").get<std::string>() == "supervised" ? Mode::supervised : Mode::unsupervised;
    m.likelihood = jm.at("likelihood").get<std::string>() == "regression" ? Likelihood::regression
                                                                          : Likelihood::classification;
    m.q = jm.at("q").get<double>();
    m.mc_draws = jm.at("mc_draws").get<long>();
    for (const auto& jl : jm.at("layers")) {
      LayerSpec s;
      s.in_dim = jl.at("in_dim").get<long>();
      s.out_dim = jl.at("out_dim").get<long>();
      s.num_inducing = jl.at("num_inducing").get<long>();
      s.beta = jl.at("beta").get<double>();
      s.q = m.q;
      const auto& jk = jl.at("kernel");
      s.kernel.family = parse_family(jk.at("family").get<std::string>());
      s.kernel.alpha = jk.at("alpha").get<double>();
      s.kernel.gamma = vector_from(jk.at("gamma"));
      s.kernel.jitter = jk.at("jitter").get<double>();
      VariationalState st;
      st.inducing = matrix_from(jl.at("inducing"));
      st.u_mean = matrix_from(jl.at("u_mean"));
      for (const auto& c : jl.at("u_cov_chol")) st.u_cov_chol.push_back(matrix_from(c));
      st.x_mean = matrix_from(jl.at("x_mean"));
      st.x_cov_diag = matrix_from(jl.at("x_cov_diag"));
      m.layers.push_back(std::move(s));
      m.states.push_back(std::move(st));
    }
    m.validate();
    if (!j.at("wall_time_s").is_null()) t.wall_time_s = j.at("wall_time_s").get<double>();
    if (!j.at("final_elbo").is_null()) t.elbo_trace.push_back(j.at("final_elbo").get<double>());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const TrainedModel& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << checkpoint_json(t).dump(1) << "\n";
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from(j);
}

inline void write_trace(const std::vector<double>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << std::setprecision(17) << "iteration,elbo\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i + 1 << "," << trace[i] << "\n";
}

inline nlohmann::ordered_json metrics_json(const TrainedModel& t, const Metrics& m, const std::string& dataset,
                                           const std::string& trace_path) {
  using persist_detail::json;
  using persist_detail::opt;
  json mj{{"mae", opt(m.mae)}, {"std", opt(m.std)}, {"nll", opt(m.nll)}, {"acc", opt(m.acc)}, {"auc", opt(m.auc)}};
  if (m.dispersion) mj["dispersion"] = *m.dispersion;
  return json{{"dataset", dataset},
              {"model", t.config.type},
              {"seed", t.config.seed},
              {"metrics", std::move(mj)},
              {"wall_time_s", opt(t.wall_time_s)},
              {"elbo_trace_path", trace_path.empty() ? json(nullptr) : json(trace_path)}};
}

inline std::string metrics_csv(const TrainedModel& t, const Metrics& m, const std::string& dataset) {
  auto f = [](const std::optional<double>& v) { return v ? persist_detail::num(*v) : std::string(); };
  std::ostringstream os;
  os << "dataset,model,seed,mae,std,nll,acc,auc,dispersion\n"
     << dataset << "," << t.config.type << "," << t.config.seed << "," << f(m.mae) << "," << f(m.std) << ","
     << f(m.nll) << "," << f(m.acc) << "," << f(m.auc) << "," << f(m.dispersion) << "\n";
  return os.str();
}

/// Latent means and stddevs on the two dominant dimensions, one row per point.
inline void export_latent(const TrainedModel& t, const std::vector<int>& labels, std::ostream& os) {
  if (t.model.mode != Mode::unsupervised) throw std::invalid_argument("latent export needs a latent-variable model");
  const auto [a, b] = dominant_dims(t);
  const Matrix& mu = t.model.states.back().x_mean;
  const Matrix& s = t.model.states.back().x_cov_diag;
  if (!labels.empty() && static_cast<long>(labels.size()) != mu.rows()) {
    throw DataError("latent export: label count does not match the latent points");
  }
  os << std::setprecision(17) << "mu_" << a << ",mu_" << b << ",sd_" << a << ",sd_" << b << ",label\n";
  for (long i = 0; i < mu.rows(); ++i) {
    os << mu(i, a) << "," << mu(i, b) << "," << std::sqrt(s(i, a)) << "," << std::sqrt(s(i, b)) << ","
       << (labels.empty() ? -1 : labels[i]) << "\n";
  }
}

// ---- bench --------------------------------------------------------------------------

struct BenchRow {
  std::string dataset, model;
  unsigned long seed = 0;
  Metrics metrics;
  double final_elbo = 0.0;
};

/// Runs every (model type, seed) cell; seeds are base.seed, base.seed+1, ...
inline std::vector<BenchRow> bench(const ExperimentConfig& base,
                                   const std::function<void(const BenchRow&)>& on_row = nullptr) {
  std::vector<std::string> models = base.bench_models;
  if (models.empty()) models.push_back(base.type);
  std::vector<BenchRow> rows;
  for (const auto& type : models) {
    for (long k = 0; k < base.bench_seeds; ++k) {
      ExperimentConfig c = base;
      c.type = type;
      c.seed = base.seed + static_cast<unsigned long>(k);
      const Dataset d = make_dataset(c);
      const auto t = train(c, d);
      BenchRow r{d.name, type, c.seed, evaluate(t, d), t.elbo_trace.empty() ? 0.0 : t.elbo_trace.back()};
      if (on_row) on_row(r);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

inline std::string bench_csv_header() { return "dataset,model,seed,mae,std,nll,acc,auc,dispersion,final_elbo"; }

inline std::string bench_csv_row(const BenchRow& r) {
  auto f = [](const std::optional<double>& v) { return v ? persist_detail::num(*v) : std::string(); };
  std::ostringstream os;
  os << r.dataset << "," << r.model << "," << r.seed << "," << f(r.metrics.mae) << "," << f(r.metrics.std) << ","
     << f(r.metrics.nll) << "," << f(r.metrics.acc) << "," << f(r.metrics.auc) << "," << f(r.metrics.dispersion) << ","
     << persist_detail::num(r.final_elbo);
  return os.str();
}

}  // namespace qepdx
