#include "pgnnl/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"

namespace pgnnl {

double rmse(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference, bool all_channels) {
  if (predicted.rows() != reference.rows() || predicted.cols() != reference.cols())
    throw ShapeError("rmse: length mismatch (" + std::to_string(predicted.rows()) + " vs " +
                     std::to_string(reference.rows()) + " rows)");
  if (predicted.rows() == 0 || predicted.cols() == 0) throw ShapeError("rmse: empty series");
  if (all_channels) return std::sqrt((predicted - reference).squaredNorm() / static_cast<double>(predicted.size()));
  return std::sqrt((predicted.col(0) - reference.col(0)).squaredNorm() / static_cast<double>(predicted.rows()));
}

// ---- config ----

PlantModel ExperimentConfig::true_plant() const {
  return plant == PlantId::Golf ? PlantModel::golf(golf) : PlantModel::valve(valve);
}

PlantModel ExperimentConfig::prior_plant(const PriorVariant& v) const { return make_prior(true_plant(), v.degradation); }

int ExperimentConfig::steps(double seconds) const { return static_cast<int>(std::llround(seconds / dt)); }

void ExperimentConfig::validate() const {
  if (plant == PlantId::Custom) throw ConfigError("experiment: plant must be golf or valve");
  if (plant == PlantId::Golf) golf.validate();
  else valve.validate();
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("experiment: dt must be positive");
  if (!(duration > 0.0) || steps(duration) < 10) throw ConfigError("experiment: duration must cover at least 10 samples");
  if (!(evaluation.duration > 0.0) || steps(evaluation.duration) < 1) throw ConfigError("experiment: evaluation duration too short");
  if (evaluation.x0.size() != 2) throw ConfigError("experiment: evaluation x0 must have 2 entries");
  if (excitations.empty()) throw ConfigError("experiment: empty excitation suite");
  for (const auto& e : excitations) e.validate();
  evaluation.excitation.validate();
  for (const auto& e : excitations) {
    nlohmann::json a = e, b = evaluation.excitation;
    if (a == b) throw ConfigError("experiment: evaluation excitation must differ from every training excitation");
  }
  if (priors.empty()) throw ConfigError("experiment: at least one prior variant is required");
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (priors[i].name.empty()) throw ConfigError("experiment: prior variant without a name");
    for (std::size_t j = 0; j < i; ++j)
      if (priors[j].name == priors[i].name) throw ConfigError("experiment: duplicate prior variant '" + priors[i].name + "'");
    prior_plant(priors[i]);
  }
  if (noise_relative) {
    if (!noise_std.empty()) throw ConfigError("experiment: give either noise_std or noise_relative");
    if (!(*noise_relative >= 0.0)) throw ConfigError("experiment: noise_relative must be >= 0");
  } else {
    if (noise_std.size() != 2) throw ConfigError("experiment: noise_std needs one entry per state");
    for (double s : noise_std)
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("experiment: noise_std must be finite and >= 0");
  }
  if (integrator.substeps < 1) throw ConfigError("experiment: integrator substeps must be >= 1");
  const auto& n = network;
  if (n.hidden.empty()) throw ConfigError("experiment: network needs at least one hidden layer");
  for (int h : n.hidden)
    if (h < 1) throw ConfigError("experiment: hidden widths must be >= 1");
  if (!(n.lambda_phy >= 0.0 && n.lambda_phy <= 1.0)) throw ConfigError("experiment: lambda_phy must lie in [0, 1]");
  if (n.epochs < 1 || n.batch_size < 0 || n.patience < 1 || !(n.learning_rate > 0.0) || n.restarts < 1)
    throw ConfigError("experiment: invalid network training settings");
  if (sindy.lambda_grid.empty()) throw ConfigError("experiment: empty SINDYc lambda grid");
  for (double l : sindy.lambda_grid)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("experiment: SINDYc lambdas must be finite and >= 0");
  if (!sindy.library.empty()) LibrarySpec::from_names(2, 1, sindy.library).validate();
  if (sindy.smoothing_window < 1 || sindy.smoothing_window % 2 == 0)
    throw ConfigError("experiment: sindy smoothing_window must be odd and >= 1");
  if (seeds.empty()) throw ConfigError("experiment: no seeds");
  if (!(transient_fraction > 0.0 && transient_fraction <= 1.0))
    throw ConfigError("experiment: transient_fraction must lie in (0, 1]");
}

ExperimentConfig ExperimentConfig::golf_default() {
  ExperimentConfig c;
  c.plant = PlantId::Golf;
  DegradationSpec deg;
  deg.scale = {{"mu", 0.5}, {"d", 0.5}};
  c.priors = {{"prior", deg}};
  c.excitations = {Excitation::sine(0.3, 0.5),       Excitation::sine(0.5, 1.2),
                   Excitation::step(0.4, 0.2),       Excitation::step(-0.3, 0.5, 0.1),
                   Excitation::chirp(0.4, 0.2, 3.0), Excitation::chirp(0.3, 0.5, 4.0)};
  c.duration = 4.0;
  c.dt = 1e-3;
  c.noise_std = {5e-3, 5e-2};
  c.network.lambda_phy = 0.999;
  c.evaluation.excitation = Excitation::chirp(0.35, 0.3, 3.5);
  c.evaluation.duration = 4.0;
  return c;
}

ExperimentConfig ExperimentConfig::valve_default() {
  ExperimentConfig c;
  c.plant = PlantId::Valve;
  c.valve.K_V = 1e-4;  // m/V
  c.valve.limits = ValveParams::default_limits(c.valve.y_max, c.valve.f_V);
  DegradationSpec a, b;
  a.drop = {"limits"};
  b.scale = {{"v_max", 0.9}, {"a_max", 1.1}};
  c.priors = {{"A", a}, {"B", b}};
  for (double amp : {1.0, 2.0, 3.0, 4.0, 6.0, -1.0, -2.0, -3.0, -4.0, -6.0})
    c.excitations.push_back(Excitation::step(amp, 0.02));
  c.duration = 0.2;
  c.dt = 5e-4;
  c.noise_relative = 0.01;
  c.split_mode = SplitMode::ByTrajectory;
  c.integrator.substeps = 10;
  c.network.prior_anchor = true;
  c.evaluation.excitation = Excitation::step(5.0, 1.0);
  c.evaluation.duration = 2.0;
  return c;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json::object();
  j["plant"] = to_string(c.plant);
  if (c.plant == PlantId::Golf) j["true_params"] = c.golf;
  else j["true_params"] = c.valve;
  nlohmann::json priors = nlohmann::json::array();
  for (const auto& p : c.priors) priors.push_back({{"name", p.name}, {"degradation", p.degradation}});
  j["priors"] = priors;
  j["excitations"] = c.excitations;
  j["duration"] = c.duration;
  j["dt"] = c.dt;
  if (c.noise_relative) j["noise_relative"] = *c.noise_relative;
  else j["noise_std"] = c.noise_std;
  j["split_mode"] = c.split_mode == SplitMode::Contiguous ? "contiguous" : "by_trajectory";
  j["integrator"] = {{"scheme", c.integrator.scheme == Scheme::Rk4 ? "rk4" : "euler"},
                     {"substeps", c.integrator.substeps}};
  const auto& n = c.network;
  j["network"] = {{"hidden", n.hidden},
                  {"activation", to_string(n.activation)},
                  {"residual", n.residual},
                  {"prior_anchor", n.prior_anchor},
                  {"lambda_phy", n.lambda_phy},
                  {"output_bound", n.output_bound ? nlohmann::json(*n.output_bound) : nlohmann::json(nullptr)},
                  {"epochs", n.epochs},
                  {"batch_size", n.batch_size},
                  {"learning_rate", n.learning_rate},
                  {"patience", n.patience},
                  {"restarts", n.restarts}};
  j["sindy"] = {{"library", c.sindy.library},
                {"lambda_grid", c.sindy.lambda_grid},
                {"solver", to_string(c.sindy.solver)},
                {"normalize_columns", c.sindy.normalize_columns},
                {"smoothing_window", c.sindy.smoothing_window}};
  j["seeds"] = c.seeds;
  j["evaluation"] = {{"excitation", c.evaluation.excitation},
                     {"duration", c.evaluation.duration},
                     {"x0", std::vector<double>(c.evaluation.x0.data(), c.evaluation.x0.data() + c.evaluation.x0.size())}};
  j["transient_fraction"] = c.transient_fraction;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static constexpr const char* ctx = "experiment";
  require_keys_subset(j,
                      {"plant", "true_params", "priors", "excitations", "duration", "dt", "noise_std", "noise_relative",
                       "split_mode", "integrator", "network", "sindy", "seeds", "evaluation", "transient_fraction"},
                      ctx);
  const auto id = plant_id_from_string(read_required<std::string>(j, "plant", ctx));
  c = id == PlantId::Valve ? ExperimentConfig::valve_default() : ExperimentConfig::golf_default();
  if (j.contains("true_params")) {
    if (id == PlantId::Golf) read_optional(j, "true_params", c.golf, ctx);
    else read_optional(j, "true_params", c.valve, ctx);
  }
  if (j.contains("priors")) {
    const auto& arr = j.at("priors");
    if (!arr.is_array()) throw ConfigError("experiment.priors: expected an array");
    c.priors.clear();
    for (const auto& p : arr) {
      require_keys_subset(p, {"name", "degradation"}, "experiment.priors");
      PriorVariant v;
      v.name = read_required<std::string>(p, "name", "experiment.priors");
      read_optional(p, "degradation", v.degradation, "experiment.priors");
      c.priors.push_back(v);
    }
  }
  read_optional(j, "excitations", c.excitations, ctx);
  read_optional(j, "duration", c.duration, ctx);
  read_optional(j, "dt", c.dt, ctx);
  if (j.contains("noise_std") || j.contains("noise_relative")) {
    c.noise_std.clear();
    c.noise_relative.reset();
  }
  read_optional(j, "noise_std", c.noise_std, ctx);
  if (j.contains("noise_relative")) c.noise_relative = read_required<double>(j, "noise_relative", ctx);
  if (j.contains("split_mode")) c.split_mode = split_mode_from_string(read_required<std::string>(j, "split_mode", ctx));
  if (j.contains("integrator")) {
    const auto& in = j.at("integrator");
    require_keys_subset(in, {"scheme", "substeps"}, "experiment.integrator");
    if (in.contains("scheme")) {
      const auto s = read_required<std::string>(in, "scheme", "experiment.integrator");
      if (s == "rk4") c.integrator.scheme = Scheme::Rk4;
      else if (s == "euler") c.integrator.scheme = Scheme::Euler;
      else throw ConfigError("experiment.integrator: unknown scheme '" + s + "'");
    }
    read_optional(in, "substeps", c.integrator.substeps, "experiment.integrator");
  }
  if (j.contains("network")) {
    const auto& nj = j.at("network");
    static constexpr const char* nctx = "experiment.network";
    require_keys_subset(nj,
                        {"hidden", "activation", "residual", "prior_anchor", "lambda_phy", "output_bound", "epochs", "batch_size",
                         "learning_rate", "patience", "restarts"},
                        nctx);
    auto& n = c.network;
    read_optional(nj, "hidden", n.hidden, nctx);
    if (nj.contains("activation")) n.activation = activation_from_string(read_required<std::string>(nj, "activation", nctx));
    read_optional(nj, "residual", n.residual, nctx);
    read_optional(nj, "prior_anchor", n.prior_anchor, nctx);
    read_optional(nj, "lambda_phy", n.lambda_phy, nctx);
    if (nj.contains("output_bound")) {
      if (nj.at("output_bound").is_null()) n.output_bound.reset();
      else n.output_bound = read_required<double>(nj, "output_bound", nctx);
    }
    read_optional(nj, "epochs", n.epochs, nctx);
    read_optional(nj, "batch_size", n.batch_size, nctx);
    read_optional(nj, "learning_rate", n.learning_rate, nctx);
    read_optional(nj, "patience", n.patience, nctx);
    read_optional(nj, "restarts", n.restarts, nctx);
  }
  if (j.contains("sindy")) {
    const auto& sj = j.at("sindy");
    static constexpr const char* sctx = "experiment.sindy";
    require_keys_subset(sj, {"library", "lambda_grid", "solver", "normalize_columns", "smoothing_window"}, sctx);
    read_optional(sj, "library", c.sindy.library, sctx);
    read_optional(sj, "lambda_grid", c.sindy.lambda_grid, sctx);
    if (sj.contains("solver")) c.sindy.solver = sindy_solver_from_string(read_required<std::string>(sj, "solver", sctx));
    read_optional(sj, "normalize_columns", c.sindy.normalize_columns, sctx);
    read_optional(sj, "smoothing_window", c.sindy.smoothing_window, sctx);
  }
  read_optional(j, "seeds", c.seeds, ctx);
  if (j.contains("evaluation")) {
    const auto& ej = j.at("evaluation");
    static constexpr const char* ectx = "experiment.evaluation";
    require_keys_subset(ej, {"excitation", "duration", "x0"}, ectx);
    read_optional(ej, "excitation", c.evaluation.excitation, ectx);
    read_optional(ej, "duration", c.evaluation.duration, ectx);
    if (ej.contains("x0")) {
      const auto x0 = read_required<std::vector<double>>(ej, "x0", ectx);
      c.evaluation.x0 = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(x0.size()));
    }
  }
  read_optional(j, "transient_fraction", c.transient_fraction, ctx);
  c.validate();
}

std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = c;
  return hex64(fnv1a64(j.dump()));
}

// ---- physics statistics ----

PhysicsStats physics_consistency_report(const Eigen::MatrixXd& rollout, std::span<const double> u,
                                        const EnergyModel& energy, double dt) {
  PhysicsStats s;
  const Eigen::Index n = rollout.rows() - 1;
  if (n < 1) return s;
  if (static_cast<Eigen::Index>(u.size()) < n) throw ShapeError("physics_consistency_report: too few input samples");
  std::vector<double> r(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::VectorXd prev = rollout.row(k).transpose();
    const Eigen::VectorXd curr = rollout.row(k + 1).transpose();
    r[k] = std::abs(energy.terms(prev, curr, u[k], dt).residual());
    sum += r[k];
  }
  std::sort(r.begin(), r.end());
  auto rank = [&](double p) {
    const auto idx = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    return r[std::clamp<std::size_t>(idx, 1, r.size()) - 1];
  };
  s.steps = static_cast<int>(n);
  s.mean_abs = sum / static_cast<double>(n);
  s.max_abs = r.back();
  s.p50 = rank(50);
  s.p90 = rank(90);
  s.p99 = rank(99);
  return s;
}

// ---- running ----

const MethodResult* SeedResult::find(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return &m;
  return nullptr;
}

namespace {

std::string variant_suffix(const ExperimentConfig& cfg, const PriorVariant& v) {
  return cfg.priors.size() > 1 ? "-" + v.name : std::string();
}

}  // namespace

LibrarySpec sindy_library(const ExperimentConfig& cfg) {
  if (!cfg.sindy.library.empty()) return LibrarySpec::from_names(2, 1, cfg.sindy.library);
  return cfg.plant == PlantId::Golf ? LibrarySpec::golf_default() : LibrarySpec::valve_default();
}

PgnnConfig network_config(const ExperimentConfig& cfg, const PlantModel& prior, const DegradationSpec& deg) {
  PgnnConfig p;
  p.prior = prior;
  p.prior_spec = deg;
  p.prior_integrator = cfg.integrator;
  p.dt = cfg.dt;
  p.hidden = cfg.network.hidden;
  p.activation = cfg.network.activation;
  p.residual = cfg.network.residual;
  p.prior_anchor = cfg.network.prior_anchor;
  p.lambda_phy = cfg.network.lambda_phy;
  p.output_bound = cfg.network.output_bound;
  p.train.epochs = cfg.network.epochs;
  p.train.batch_size = cfg.network.batch_size;
  p.train.learning_rate = cfg.network.learning_rate;
  p.train.patience = cfg.network.patience;
  return p;
}

namespace {

struct Energies {
  EnergyModel prior, truth;
};

// A diverging rollout is a result (infinite error), not a method failure.
template <typename RolloutFn>
void evaluate_rollout(MethodResult& m, RolloutFn&& fn, const Report& r, const Energies& en, double dt) {
  Eigen::MatrixXd rollout;
  try {
    rollout = fn();
  } catch (const DivergenceError& e) {
    m.diverged = true;
    m.diverged_step = static_cast<int>(e.step());
    m.rmse = m.rmse_all = std::numeric_limits<double>::infinity();
    return;
  }
  const std::span<const double> u(r.u.data(), static_cast<std::size_t>(r.u.size()));
  m.rollout = rollout;
  m.rmse = rmse(rollout, r.reference);
  m.rmse_all = rmse(rollout, r.reference, true);
  m.physics = physics_consistency_report(rollout, u, en.prior, dt);
  m.physics_true = physics_consistency_report(rollout, u, en.truth, dt);
  m.max_abs_x1 = rollout.col(0).cwiseAbs().maxCoeff();
  m.max_abs_x2 = rollout.col(1).cwiseAbs().maxCoeff();
}

// Trains `restarts` networks with seeds seed*1000 + r and keeps the one with
// the lowest validation rollout RMSE.
template <typename TrainFn>
PgnnModel best_of_restarts(PgnnConfig pc, const ExperimentConfig& cfg, std::uint64_t seed, const Dataset& data,
                           TrainFn&& train_fn, double& val_rmse) {
  std::optional<PgnnModel> best;
  val_rmse = std::numeric_limits<double>::infinity();
  std::string last_error;
  for (int r = 0; r < cfg.network.restarts; ++r) {
    pc.train.seed = seed * 1000 + static_cast<std::uint64_t>(r);
    pc.init_seed = pc.train.seed;
    try {
      PgnnModel m = train_fn(pc).model;
      const double v = pgnn_validation_rmse(m, data);
      if (!best || v < val_rmse) {
        best = std::move(m);
        val_rmse = v;
      }
    } catch (const DivergenceError& e) {
      last_error = e.what();
    }
  }
  if (!best) throw DivergenceError("every restart diverged: " + last_error, 0);
  return *best;
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<std::string>& methods,
                    std::optional<double> fraction, const Report& report) {
  SeedResult out;
  out.seed = seed;
  Dataset data = benchmark_dataset(cfg, seed);
  if (fraction) data = split_60_20_20(leading_fraction(data, *fraction), cfg.split_mode, seed);

  const Energies energies{EnergyModel::for_plant(cfg.prior_plant(cfg.priors.front())),
                          EnergyModel::for_plant(cfg.true_plant())};
  const int n = static_cast<int>(report.u.size()) - 1;
  const std::span<const double> u(report.u.data(), static_cast<std::size_t>(n));
  const Eigen::VectorXd& x0 = cfg.evaluation.x0;
  auto wanted = [&](const std::string& name) {
    return methods.empty() || std::find(methods.begin(), methods.end(), name) != methods.end();
  };
  auto run = [&](const std::string& name, auto&& body) {
    if (!wanted(name)) return;
    MethodResult m;
    m.method = name;
    try {
      body(m);
    } catch (const std::exception& e) {
      m.failed = true;
      m.error = e.what();
      m.rollout.resize(0, 0);
      warn("bench: " + name + " failed for seed " + std::to_string(seed) + ": " + e.what());
    }
    out.methods.push_back(std::move(m));
  };

  for (const auto& v : cfg.priors) {
    run("prior" + variant_suffix(cfg, v), [&](MethodResult& m) {
      const PlantModel prior = cfg.prior_plant(v);
      evaluate_rollout(m, [&] { return integrate(prior, x0, u, cfg.dt, n, cfg.integrator).x; }, report, energies, cfg.dt);
    });
  }

  run("nn", [&](MethodResult& m) {
    PgnnConfig pc = network_config(cfg, cfg.prior_plant(cfg.priors.front()), cfg.priors.front().degradation);
    pc.prior.reset();
    pc.prior_anchor = false;
    pc.layout = InputLayout::baseline();
    pc.lambda_phy = 0.0;
    const PgnnModel model = best_of_restarts(
        pc, cfg, seed, data, [&](const PgnnConfig& c) { return train_baseline_nn(c, data); }, m.validation_rmse);
    m.neurons = model.net.neuron_count();
    evaluate_rollout(m, [&] { return predict_rollout(model, u, x0, n); }, report, energies, cfg.dt);
  });

  run("sindyc", [&](MethodResult& m) {
    SindyFitOptions opts;
    opts.solver = cfg.sindy.solver;
    opts.stlsq.normalize_columns = cfg.sindy.normalize_columns;
    opts.lasso.normalize_columns = cfg.sindy.normalize_columns;
    const Dataset smoothed = cfg.sindy.smoothing_window > 1 ? smooth_outputs(data, cfg.sindy.smoothing_window) : data;
    const LambdaSelection sel = select_sindy_lambda(smoothed, sindy_library(cfg), cfg.sindy.lambda_grid, opts);
    m.sindy_lambda = sel.model.lambda;
    m.sindy_nonzeros = sel.model.nonzeros();
    m.validation_rmse = *std::min_element(sel.val_rmse.begin(), sel.val_rmse.end());
    evaluate_rollout(m, [&] { return sindy_rollout(sel.model, u, x0, n); }, report, energies, cfg.dt);
  });

  for (const auto& v : cfg.priors) {
    run("pgnn-l" + variant_suffix(cfg, v), [&](MethodResult& m) {
      const PgnnConfig pc = network_config(cfg, cfg.prior_plant(v), v.degradation);
      const TrainingTable table = build_training_table(pc, data);
      const PgnnModel model = best_of_restarts(
          pc, cfg, seed, data, [&](const PgnnConfig& c) { return train_pgnn(c, data, table); }, m.validation_rmse);
      m.neurons = model.net.neuron_count();
      m.lambda_phy = model.lambda_phy;
      evaluate_rollout(m, [&] { return predict_rollout(model, u, x0, n); }, report, energies, cfg.dt);
    });
  }
  return out;
}

Report make_report(const ExperimentConfig& cfg) {
  cfg.validate();
  Report r;
  r.plant = to_string(cfg.plant);
  r.config = cfg;
  r.config_hash = config_hash(cfg);
  const int n = cfg.steps(cfg.evaluation.duration);
  const auto u = generate_signal(cfg.evaluation.excitation, cfg.dt, n);
  r.u = Eigen::Map<const Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
  r.t = Eigen::VectorXd::LinSpaced(n + 1, 0.0, n * cfg.dt);
  for (Eigen::Index k = 0; k <= n; ++k) r.t(k) = static_cast<double>(k) * cfg.dt;
  const PlantModel truth = cfg.true_plant();
  r.reference = integrate(truth, cfg.evaluation.x0, u, cfg.dt, n, cfg.integrator).x;
  r.reference_physics = physics_consistency_report(r.reference, u, EnergyModel::for_plant(truth), cfg.dt);
  return r;
}

Report run_impl(const ExperimentConfig& cfg, const std::vector<std::string>& methods, std::optional<double> fraction) {
  Report r = make_report(cfg);
  const auto names = method_names(cfg);
  for (const auto& m : methods)
    if (std::find(names.begin(), names.end(), m) == names.end()) throw ConfigError("bench: unknown method '" + m + "'");
  if (fraction) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "leading %.4g %% of every trajectory", *fraction * 100.0);
    r.data_note = buf;
  }
  for (auto seed : cfg.seeds) r.seeds.push_back(run_seed(cfg, seed, methods, fraction, r));
  return r;
}

}  // namespace

std::vector<std::string> method_names(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& v : cfg.priors) out.push_back("prior" + variant_suffix(cfg, v));
  out.push_back("nn");
  out.push_back("sindyc");
  for (const auto& v : cfg.priors) out.push_back("pgnn-l" + variant_suffix(cfg, v));
  return out;
}

Dataset benchmark_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const PlantModel truth = cfg.true_plant();
  const int n = cfg.steps(cfg.duration);
  std::vector<double> noise = cfg.noise_std;
  if (cfg.noise_relative) {
    std::vector<double> peak(2, 0.0);
    const std::vector<double> zero(2, 0.0);
    for (const auto& e : cfg.excitations) {
      const Dataset clean = simulate_measurement(truth, e, cfg.dt, n, zero, 0, {}, cfg.integrator);
      for (int c = 0; c < 2; ++c) peak[c] = std::max(peak[c], clean.y.col(c).cwiseAbs().maxCoeff());
    }
    noise = {*cfg.noise_relative * peak[0], *cfg.noise_relative * peak[1]};
  }
  std::vector<Dataset> parts;
  for (std::size_t i = 0; i < cfg.excitations.size(); ++i)
    parts.push_back(simulate_measurement(truth, cfg.excitations[i], cfg.dt, n, noise, seed * 100 + i, {}, cfg.integrator));
  return split_60_20_20(concat(parts), cfg.split_mode, seed);
}

Report run_benchmark(const ExperimentConfig& cfg, const std::vector<std::string>& methods, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("bench: fraction must lie in (0, 1]");
  return run_impl(cfg, methods, fraction < 1.0 ? std::optional<double>(fraction) : std::nullopt);
}

Report run_golf_benchmark(const ExperimentConfig& cfg) {
  if (cfg.plant != PlantId::Golf) throw ConfigError("run_golf_benchmark: plant must be golf");
  return run_benchmark(cfg);
}

Report run_valve_benchmark(const ExperimentConfig& cfg) {
  if (cfg.plant != PlantId::Valve) throw ConfigError("run_valve_benchmark: plant must be valve");
  if (!cfg.valve.limits) throw ConfigError("run_valve_benchmark: the true valve needs limits");
  return run_benchmark(cfg);
}

ReducedDataStudy run_reduced_data_study(const ExperimentConfig& cfg, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("reduced-data study: fraction must lie in (0, 1]");
  std::vector<std::string> methods = {"sindyc"};
  for (const auto& v : cfg.priors) methods.push_back("pgnn-l" + variant_suffix(cfg, v));
  ReducedDataStudy s;
  s.fraction = fraction;
  s.full = run_impl(cfg, methods, std::nullopt);
  s.reduced = run_impl(cfg, methods, fraction);
  return s;
}

// ---- output ----

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json physics_json(const PhysicsStats& s) {
  return {{"steps", s.steps}, {"mean_abs", num(s.mean_abs)}, {"max_abs", num(s.max_abs)},
          {"p50", num(s.p50)}, {"p90", num(s.p90)},         {"p99", num(s.p99)}};
}

std::string cell(double v) {
  if (!std::isfinite(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4e", v);
  return buf;
}

}  // namespace

nlohmann::json report_to_json(const Report& r) {
  nlohmann::json j;
  j["plant"] = r.plant;
  j["config_hash"] = r.config_hash;
  j["config"] = r.config;
  if (!r.data_note.empty()) j["data"] = r.data_note;
  j["evaluation_steps"] = r.u.size() > 0 ? r.u.size() - 1 : 0;
  j["reference_physics"] = physics_json(r.reference_physics);
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.seeds) {
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : s.methods) {
      nlohmann::json mj = {{"method", m.method}, {"failed", m.failed}};
      if (m.failed) {
        mj["error"] = m.error;
      } else if (m.diverged) {
        mj["diverged"] = true;
        mj["diverged_step"] = m.diverged_step;
        mj["rmse"] = "inf";
        mj["rmse_all"] = "inf";
      } else {
        mj["rmse"] = num(m.rmse);
        mj["rmse_all"] = num(m.rmse_all);
        mj["physics"] = physics_json(m.physics);
        mj["physics_true"] = physics_json(m.physics_true);
        mj["max_abs_x1"] = num(m.max_abs_x1);
        mj["max_abs_x2"] = num(m.max_abs_x2);
      }
      mj["neurons"] = m.neurons;
      mj["lambda_phy"] = m.lambda_phy;
      if (m.method != "sindyc" && m.method.rfind("prior", 0) != 0) mj["validation_rmse"] = num(m.validation_rmse);
      if (m.method == "sindyc") {
        mj["validation_rmse"] = num(m.validation_rmse);
        mj["sindy_lambda"] = m.sindy_lambda;
        mj["sindy_nonzeros"] = m.sindy_nonzeros;
      }
      ms.push_back(mj);
    }
    seeds.push_back({{"seed", s.seed}, {"config_hash", r.config_hash}, {"methods", ms}});
  }
  j["seeds"] = seeds;
  return j;
}

std::string report_to_markdown(const Report& r) {
  std::string md = "# Benchmark report: " + r.plant + "\n\n";
  md += "Config hash `" + r.config_hash + "`";
  if (!r.data_note.empty()) md += ", training data: " + r.data_note;
  md += ".\n\nEnergy residuals use the prior's energy model unless marked true plant.\n\nReference (true plant) energy residual: mean " + cell(r.reference_physics.mean_abs) + ", max " +
        cell(r.reference_physics.max_abs) + ".\n";
  for (const auto& s : r.seeds) {
    md += "\n## Seed " + std::to_string(s.seed) + "\n\n";
    md += "| method | RMSE y1 | RMSE all | mean abs residual | max abs residual | mean abs residual (true plant) | max abs x2 | neurons | lambda_phy |\n";
    md += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& m : s.methods) {
      if (m.failed) {
        md += "| " + m.method + " | failed: " + m.error + " | | | | | | | |\n";
        continue;
      }
      if (m.diverged) {
        md += "| " + m.method + " | diverged at step " + std::to_string(m.diverged_step) + " | | | | | | | |\n";
        continue;
      }
      char lam[32];
      std::snprintf(lam, sizeof lam, "%.3g", m.lambda_phy);
      md += "| " + m.method + " | " + cell(m.rmse) + " | " + cell(m.rmse_all) + " | " + cell(m.physics.mean_abs) +
            " | " + cell(m.physics.max_abs) + " | " + cell(m.physics_true.mean_abs) + " | " + cell(m.max_abs_x2) + " | " + std::to_string(m.neurons) + " | " +
            lam + " |\n";
    }
  }
  return md;
}

std::string rollout_to_csv(const Report& r, const MethodResult& m) {
  if (m.failed || m.diverged) throw ConfigError("rollout_to_csv: method " + m.method + " has no rollout");
  std::string out = "t,u,y1_ref,y2_ref,y1,y2\n";
  for (Eigen::Index k = 0; k < m.rollout.rows(); ++k) {
    out += format_double(r.t(k)) + "," + format_double(r.u(k)) + "," + format_double(r.reference(k, 0)) + "," +
           format_double(r.reference(k, 1)) + "," + format_double(m.rollout(k, 0)) + "," +
           format_double(m.rollout(k, 1)) + "\n";
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const Report& r) {
  write_file_atomic(dir / "report.json", report_to_json(r).dump(2) + "\n");
  write_file_atomic(dir / "report.md", report_to_markdown(r));
  for (const auto& s : r.seeds)
    for (const auto& m : s.methods)
      if (!m.failed && !m.diverged)
        write_file_atomic(dir / ("rollout_" + m.method + "_seed" + std::to_string(s.seed) + ".csv"), rollout_to_csv(r, m));
}

}  // namespace pgnnl
