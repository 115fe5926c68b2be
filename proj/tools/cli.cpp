#include "pgnnl/cli.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "pgnnl/bench.hpp"
#include "pgnnl/datakit.hpp"
#include "pgnnl/errors.hpp"
#include "pgnnl/hyperopt.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"
#include "pgnnl/pgnn.hpp"
#include "pgnnl/sindy.hpp"

namespace pgnnl {
namespace {

namespace fs = std::filesystem;

struct SearchSettings {
  int budget = 20;
  SearchStrategy strategy = SearchStrategy::Surrogate;
  int initial_random = 5;
  SearchSpace space = SearchSpace::pgnn_default();
};

std::vector<double> default_sweep_grid() { return {0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99}; }

// Paths inside the file are relative to the file's directory.
struct RunConfig {
  fs::path base_dir;
  std::uint64_t seed = 1;
  std::string out = "out";
  ExperimentConfig experiment = ExperimentConfig::golf_default();
  std::string dataset;
  std::string model;
  std::string method = "pgnn-l";
  std::string prior;
  std::vector<double> lambda_grid = default_sweep_grid();
  /// eval only; may reuse a training excitation
  std::optional<EvaluationSpec> evaluation;
  SearchSettings search;
  bool reduced_data = false;

  fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; }
};

RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir) {
  static constexpr const char* ctx = "config";
  require_keys_subset(j,
                      {"seed", "out", "experiment", "dataset", "model", "method", "prior", "lambda_grid", "evaluation",
                       "search", "reduced_data"},
                      ctx);
  RunConfig c;
  c.base_dir = base_dir;
  read_optional(j, "seed", c.seed, ctx);
  read_optional(j, "out", c.out, ctx);
  if (j.contains("experiment")) c.experiment = j.at("experiment").get<ExperimentConfig>();
  read_optional(j, "dataset", c.dataset, ctx);
  read_optional(j, "model", c.model, ctx);
  read_optional(j, "method", c.method, ctx);
  read_optional(j, "prior", c.prior, ctx);
  read_optional(j, "lambda_grid", c.lambda_grid, ctx);
  read_optional(j, "reduced_data", c.reduced_data, ctx);
  if (j.contains("evaluation")) {
    const auto& ej = j.at("evaluation");
    static constexpr const char* ectx = "config.evaluation";
    require_keys_subset(ej, {"excitation", "duration", "x0"}, ectx);
    EvaluationSpec e = c.experiment.evaluation;
    read_optional(ej, "excitation", e.excitation, ectx);
    read_optional(ej, "duration", e.duration, ectx);
    if (ej.contains("x0")) {
      const auto x0 = read_required<std::vector<double>>(ej, "x0", ectx);
      if (x0.size() != 2) throw ConfigError("config.evaluation: x0 needs two entries");
      e.x0 = Eigen::Map<const Eigen::VectorXd>(x0.data(), 2);
    }
    if (!(e.duration > 0.0)) throw ConfigError("config.evaluation: duration must be positive");
    c.evaluation = e;
  }
  if (j.contains("search")) {
    const auto& sj = j.at("search");
    static constexpr const char* sctx = "config.search";
    require_keys_subset(sj, {"budget", "strategy", "initial_random", "space"}, sctx);
    read_optional(sj, "budget", c.search.budget, sctx);
    if (sj.contains("strategy"))
      c.search.strategy = search_strategy_from_string(read_required<std::string>(sj, "strategy", sctx));
    read_optional(sj, "initial_random", c.search.initial_random, sctx);
    if (sj.contains("space")) c.search.space = sj.at("space").get<SearchSpace>();
  }
  if (c.search.budget < 1) throw ConfigError("config.search: budget must be >= 1");
  c.search.space.validate();
  return c;
}

// Everything a run depends on, itself a valid config. The output directory is
// left out so runs into different directories produce identical files.
nlohmann::json resolved_json(const RunConfig& c) {
  nlohmann::json j = {{"seed", c.seed},
          {"experiment", c.experiment},
          {"dataset", c.dataset},
          {"model", c.model},
          {"method", c.method},
          {"prior", c.prior},
          {"lambda_grid", c.lambda_grid},
          {"search",
           {{"budget", c.search.budget},
            {"strategy", to_string(c.search.strategy)},
            {"initial_random", c.search.initial_random},
            {"space", c.search.space}}},
          {"reduced_data", c.reduced_data}};
  if (c.evaluation) {
    const auto& e = *c.evaluation;
    j["evaluation"] = {{"excitation", e.excitation},
                       {"duration", e.duration},
                       {"x0", std::vector<double>(e.x0.data(), e.x0.data() + e.x0.size())}};
  }
  return j;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

const PriorVariant& selected_prior(const RunConfig& c) {
  if (c.prior.empty()) return c.experiment.priors.front();
  for (const auto& v : c.experiment.priors)
    if (v.name == c.prior) return v;
  throw ConfigError("config.prior: no prior variant named '" + c.prior + "'");
}

PgnnConfig pgnn_settings(const RunConfig& c) {
  const PriorVariant& v = selected_prior(c);
  PgnnConfig p = network_config(c.experiment, c.experiment.prior_plant(v), v.degradation);
  p.train.seed = c.seed;
  p.init_seed = c.seed;
  return p;
}

Dataset training_data(const RunConfig& c) {
  if (!c.dataset.empty()) return read_dataset(c.resolve(c.dataset));
  return benchmark_dataset(c.experiment, c.seed);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

// ---- commands ----

int cmd_gen_data(const RunConfig& c, const fs::path& out_dir, std::ostream& out) {
  const Dataset d = benchmark_dataset(c.experiment, c.seed);
  write_dataset(out_dir, d);
  out << "trajectories: " << d.trajectory_count() << "\n"
      << "samples: " << d.size() << "\n"
      << "noise_std: " << join(d.noise_std) << "\n"
      << "dataset: " << (out_dir / "dataset.json").string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  const Dataset data = training_data(c);
  if (c.method == "sindyc") {
    const auto& s = c.experiment.sindy;
    SindyFitOptions opts;
    opts.solver = s.solver;
    opts.stlsq.normalize_columns = s.normalize_columns;
    opts.lasso.normalize_columns = s.normalize_columns;
    const Dataset fit_data = s.smoothing_window > 1 ? smooth_outputs(data, s.smoothing_window) : data;
    const LambdaSelection sel = select_sindy_lambda(fit_data, sindy_library(c.experiment), s.lambda_grid, opts);
    std::string csv = "lambda,val_rmse\n";
    for (std::size_t i = 0; i < sel.lambdas.size(); ++i)
      csv += format_double(sel.lambdas[i]) + "," + format_double(sel.val_rmse[i]) + "\n";
    write_file_atomic(out_dir / "lambda_selection.csv", csv);
    write_json(out_dir / "model.json", nlohmann::json(sel.model));
    out << "sindyc: lambda " << format_double(sel.model.lambda) << ", " << sel.model.nonzeros() << " nonzero terms\n";
    return kExitOk;
  }
  if (c.method != "nn" && c.method != "pgnn-l")
    throw ConfigError("train: unknown method '" + c.method + "' (expected nn, pgnn-l or sindyc)");

  PgnnConfig pc = pgnn_settings(c);
  TrainHistory partial;
  partial.component_names = {"L_error", "L_phy"};
  pc.train.on_epoch = [&partial](const EpochRecord& rec) { partial.epochs.push_back(rec); };
  PgnnTrainResult result;
  try {
    if (c.method == "nn") {
      pc.prior.reset();
      pc.prior_anchor = false;
      result = train_baseline_nn(pc, data);
    } else {
      result = train_pgnn(pc, data);
    }
  } catch (const DivergenceError& e) {
    write_file_atomic(out_dir / "history.csv", history_to_csv(partial));
    err << e.what() << "; partial history written\n";
    return kExitDivergence;
  }
  write_file_atomic(out_dir / "history.csv", history_to_csv(result.history));
  save_pgnn(result.model, out_dir / "model.json", {{"seed", c.seed}});
  out << c.method << ": " << result.history.epochs.size() << " epochs, best epoch " << result.history.best_epoch
      << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const fs::path& out_dir, std::ostream& out) {
  if (c.model.empty()) throw ConfigError("eval: config.model is required");
  const fs::path model_path = c.resolve(c.model);
  nlohmann::json model_json;
  try {
    model_json = nlohmann::json::parse(read_file(model_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("eval: " + model_path.string() + ": " + e.what());
  }

  const ExperimentConfig& x = c.experiment;
  const EvaluationSpec ev = c.evaluation.value_or(x.evaluation);
  const int n = x.steps(ev.duration);
  const auto u = generate_signal(ev.excitation, x.dt, n);
  const PlantModel truth = x.true_plant();
  const Eigen::MatrixXd reference = integrate(truth, ev.x0, u, x.dt, n, x.integrator).x;

  std::string method;
  std::function<Eigen::MatrixXd()> rollout_fn;
  std::optional<SindyModel> sindy;
  std::optional<PgnnModel> pgnn;
  if (model_json.is_object() && model_json.contains("xi")) {
    sindy = model_json.get<SindyModel>();
    method = "sindyc";
    if (std::abs(sindy->dt - x.dt) > 1e-12 * x.dt) throw ConfigError("eval: model dt differs from experiment dt");
    rollout_fn = [&] { return sindy_rollout(*sindy, u, ev.x0, n); };
  } else {
    pgnn = load_pgnn(model_path);
    method = pgnn->method;
    if (std::abs(pgnn->dt - x.dt) > 1e-12 * x.dt) throw ConfigError("eval: model dt differs from experiment dt");
    rollout_fn = [&] { return predict_rollout(*pgnn, u, ev.x0, n); };
  }

  nlohmann::json metrics = {{"method", method}, {"steps", n}, {"dt", x.dt}};
  Eigen::MatrixXd rollout;
  try {
    rollout = rollout_fn();
  } catch (const DivergenceError& e) {
    metrics["diverged"] = true;
    metrics["diverged_step"] = e.step();
    metrics["rmse"] = nullptr;
    metrics["rmse_all"] = nullptr;
    write_json(out_dir / "metrics.json", metrics);
    out << method << ": rollout diverged at step " << e.step() << "\n";
    return kExitDivergence;
  }
  const PhysicsStats ph = physics_consistency_report(rollout, u, EnergyModel::for_plant(truth), x.dt);
  metrics["diverged"] = false;
  metrics["rmse"] = rmse(rollout, reference);
  metrics["rmse_all"] = rmse(rollout, reference, true);
  metrics["physics_true"] = {{"mean_abs", ph.mean_abs}, {"max_abs", ph.max_abs}, {"p50", ph.p50},
                             {"p90", ph.p90},           {"p99", ph.p99}};
  std::string csv = "t,u,y1_ref,y2_ref,y1,y2\n";
  for (int k = 0; k <= n; ++k) {
    const double uk = k < n ? u[static_cast<std::size_t>(k)] : u.back();
    csv += format_double(static_cast<double>(k) * x.dt) + "," + format_double(uk) + "," +
           format_double(reference(k, 0)) + "," + format_double(reference(k, 1)) + "," + format_double(rollout(k, 0)) +
           "," + format_double(rollout(k, 1)) + "\n";
  }
  write_file_atomic(out_dir / "rollout.csv", csv);
  write_json(out_dir / "metrics.json", metrics);
  out << method << ": rmse " << format_double(metrics["rmse"].get<double>()) << "\n";
  return kExitOk;
}

int cmd_bench(const RunConfig& c, const fs::path& out_dir, const std::optional<std::string>& method,
              std::ostream& out) {
  std::vector<std::string> methods;
  if (method) methods.push_back(*method);
  const Report r = run_benchmark(c.experiment, methods);
  write_report(out_dir, r);
  for (const auto& s : r.seeds)
    for (const auto& m : s.methods)
      out << "seed " << s.seed << " " << m.method << ": "
          << (m.failed ? "failed" : m.diverged ? "diverged" : "rmse " + format_double(m.rmse)) << "\n";
  if (c.reduced_data) {
    const ReducedDataStudy s = run_reduced_data_study(c.experiment, c.experiment.transient_fraction);
    write_report(out_dir / "reduced_full", s.full);
    write_report(out_dir / "reduced_transient", s.reduced);
    out << "reduced-data study written\n";
  }
  return kExitOk;
}

int cmd_sweep(const RunConfig& c, const fs::path& out_dir, std::ostream& out) {
  const Dataset data = training_data(c);
  const auto points = pareto_sweep(c.lambda_grid, pgnn_settings(c), data);
  write_file_atomic(out_dir / "pareto.csv", pareto_to_csv(points));
  int front = 0;
  for (const auto& p : points) front += p.nondominated ? 1 : 0;
  out << points.size() << " lambda values, " << front << " nondominated\n";
  return kExitOk;
}

int cmd_search(const RunConfig& c, const fs::path& out_dir, std::ostream& out) {
  const Dataset data = training_data(c);
  SearchOptions opts;
  opts.budget = c.search.budget;
  opts.strategy = c.search.strategy;
  opts.initial_random = c.search.initial_random;
  opts.seed = c.seed;
  const SearchResult res = search(c.search.space, pgnn_objective(pgnn_settings(c), data), opts);
  write_file_atomic(out_dir / "trials.jsonl", trials_to_jsonl(res.records));
  write_json(out_dir / "best.json", trial_to_json(res.best));
  out << res.records.size() << " trials, best objective " << format_double(res.best.objective) << "\n";
  return kExitOk;
}

int dispatch(const std::string& command, const std::string& config_path, const std::optional<std::string>& out_flag,
             const std::optional<std::uint64_t>& seed_flag, const std::optional<std::string>& method_flag,
             std::ostream& out, std::ostream& err) {
  RunConfig c;
  if (!config_path.empty()) {
    const fs::path cp(config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(cp));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(config_path + ": " + e.what());
    }
    c = parse_run_config(j, cp.parent_path());
  } else {
    c.base_dir = fs::current_path();
  }
  if (seed_flag) {
    c.seed = *seed_flag;
    c.experiment.seeds = {*seed_flag};
  }
  if (method_flag) c.method = *method_flag;
  c.experiment.validate();
  const fs::path out_dir = out_flag ? fs::path(*out_flag) : c.resolve(c.out);
  fs::create_directories(out_dir);
  write_json(out_dir / "resolved_config.json", resolved_json(c));

  if (command == "gen-data") return cmd_gen_data(c, out_dir, out);
  if (command == "train") return cmd_train(c, out_dir, out, err);
  if (command == "eval") return cmd_eval(c, out_dir, out);
  if (command == "bench") return cmd_bench(c, out_dir, method_flag, out);
  if (command == "sweep-lambda") return cmd_sweep(c, out_dir, out);
  return cmd_search(c, out_dir, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Physics-guided network identification toolkit", "pgnnl"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::string> out_flag, method_flag;
  std::optional<std::uint64_t> seed_flag;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Simulate the excitation suite and write the noisy dataset"},
      {"train", "Train one method (nn, pgnn-l, sindyc) and write the model and loss history"},
      {"eval", "Roll a trained model out on the evaluation trajectory"},
      {"bench", "Run the benchmark over all seeds and write the report"},
      {"sweep-lambda", "Train one PGNN-L per lambda and write the Pareto front"},
      {"search", "Hyperparameter search over the configured space"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out_flag, "Output directory");
    sub->add_option("--seed", seed_flag, "Global seed");
    sub->add_option("--method", method_flag, "Method name");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "pgnnl: " << e.what() << "\n";
    return kExitConfig;
  }

  std::string command;
  for (const auto& [name, help] : commands)
    if (app.got_subcommand(name)) command = name;

  try {
    return dispatch(command, config_path, out_flag, seed_flag, method_flag, out, err);
  } catch (const ConfigError& e) {
    err << "pgnnl " << command << ": configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    err << "pgnnl " << command << ": configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "pgnnl " << command << ": numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "pgnnl " << command << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "pgnnl " << command << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "pgnnl " << command << ": " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace pgnnl
