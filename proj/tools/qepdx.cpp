// qepdx command line: gen | train | eval | latent | gradcheck | bench
//
// exit codes: 0 ok, 2 config or usage error, 3 numerical failure, 4 data error

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "qepdx/experiment.hpp"

namespace {

using namespace qepdx;

struct Args {
  std::string config, out, model, data, format = "json";
  std::optional<unsigned long> seed;
};

ExperimentConfig config_from(const Args& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  if (a.seed) c.seed = *a.seed;
  return c;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

int cmd_gen(const Args& a) {
  ExperimentConfig c = config_from(a);
  if (!a.data.empty()) c.source = a.data;
  const Dataset d = make_dataset(c);
  if (a.out.empty()) {
    write_dataset_csv(d, std::cout);
  } else {
    auto out = open_out(a.out);
    write_dataset_csv(d, out);
  }
  return 0;
}

int cmd_train(const Args& a) {
  ExperimentConfig c = config_from(a);
  if (!a.data.empty()) c.source = a.data;
  if (!a.out.empty()) c.checkpoint = a.out;
  const Dataset d = make_dataset(c);
  const auto t = train(c, d);
  save_checkpoint(t, c.checkpoint);
  write_trace(t.elbo_trace, c.trace);
  std::cerr << "trained " << c.type << " on " << d.name << ": final ELBO "
            << (t.elbo_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : t.elbo_trace.back()) << "\n";
  return 0;
}

int cmd_eval(const Args& a) {
  if (a.model.empty()) throw ConfigError("eval needs --model");
  if (a.format != "json" && a.format != "csv") throw ConfigError("--format must be json or csv");
  const auto t = load_checkpoint(a.model);
  ExperimentConfig c = t.config;
  if (!a.data.empty()) c.source = a.data;
  const Dataset d = make_dataset(c);
  const Metrics m = evaluate(t, d);
  const std::string text = a.format == "json" ? metrics_json(t, m, d.name, t.config.trace).dump(1) + "\n"
                                              : metrics_csv(t, m, d.name);
  const std::string path = a.out.empty() ? t.config.metrics : a.out;
  if (path == "-") {
    std::cout << text;
  } else {
    auto out = open_out(path);
    out << text;
  }
  return 0;
}

int cmd_latent(const Args& a) {
  if (a.model.empty()) throw ConfigError("latent needs --model");
  const auto t = load_checkpoint(a.model);
  std::vector<int> labels;
  ExperimentConfig c = t.config;
  if (!a.data.empty()) c.source = a.data;
  const Dataset d = make_dataset(c);
  if (!d.labels.empty()) {
    for (long i : d.train) labels.push_back(d.labels[i]);
  }
  const std::string path = a.out.empty() ? t.config.latent : a.out;
  auto out = open_out(path);
  export_latent(t, labels, out);
  return 0;
}

int cmd_gradcheck(const Args& a) {
  ExperimentConfig c = config_from(a);
  if (!a.data.empty()) c.source = a.data;
  Dataset d = make_dataset(c);
  // a small slice keeps finite differences cheap
  const long n = std::min<long>(8, static_cast<long>(d.train.size()));
  d.train.resize(n);
  c.num_inducing = std::min<long>(c.num_inducing, 4);
  c.mc_samples = std::min<long>(c.mc_samples, 4);
  c.iterations = 0;
  const auto t = train(c, d);
  Matrix y = take_rows(d.y, d.train);
  if (!d.classification) y = t.y_std.apply(y);
  Matrix x;
  if (!d.latent()) x = t.x_std.apply(take_rows(d.x, d.train));
  const auto report = check_gradient(deep_objective(t.model, y, d.latent() ? nullptr : &x, c.seed), model_params(t.model));
  for (const auto& [name, err] : report.per_block_max) std::cout << name << " " << err << "\n";
  std::cout << "max_rel " << report.max_rel << " worst " << report.worst_field << "[" << report.worst_index << "]\n";
  return report.max_rel < 1e-4 ? 0 : 3;
}

int cmd_bench(const Args& a) {
  const ExperimentConfig c = config_from(a);
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << bench_csv_header() << "\n";
  bench(c, [&](const BenchRow& r) {
    out << bench_csv_row(r) << "\n";
    out.flush();
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Q-exponential process models: train, evaluate and inspect"};
  app.require_subcommand(1);
  Args a;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", a.config, "config file (flat dotted key = value)");
    s->add_option("--seed", a.seed, "override data.seed");
    s->add_option("--out", a.out, "output path");
    s->add_option("--data", a.data, "dataset: generator name or CSV path");
  };
  auto* gen = app.add_subcommand("gen", "write a dataset as CSV");
  auto* trn = app.add_subcommand("train", "fit a model and save a checkpoint");
  auto* evl = app.add_subcommand("eval", "compute test metrics for a checkpoint");
  auto* lat = app.add_subcommand("latent", "export the dominant 2d latent slice");
  auto* grd = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  auto* bch = app.add_subcommand("bench", "train and evaluate over models and seeds");
  for (auto* s : {gen, trn, evl, lat, grd, bch}) add_common(s);
  for (auto* s : {evl, lat}) s->add_option("--model", a.model, "checkpoint path")->required();
  evl->add_option("--format", a.format, "json or csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(a);
    if (trn->parsed()) return cmd_train(a);
    if (evl->parsed()) return cmd_eval(a);
    if (lat->parsed()) return cmd_latent(a);
    if (grd->parsed()) return cmd_gradcheck(a);
    if (bch->parsed()) return cmd_bench(a);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const SingularDensity& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
