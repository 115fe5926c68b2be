#include "pgnnl/hyperopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <set>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"

namespace pgnnl {

namespace {

std::string kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::Int: return "int";
    case ParamKind::LogReal: return "log_real";
    case ParamKind::Real: return "real";
    case ParamKind::Categorical: return "categorical";
  }
  return "";
}

ParamKind kind_from_name(const std::string& s) {
  for (auto k : {ParamKind::Int, ParamKind::LogReal, ParamKind::Real, ParamKind::Categorical})
    if (kind_name(k) == s) return k;
  throw ConfigError("search space: unknown parameter kind '" + s + "'");
}

std::size_t bucket(double t, std::size_t n) {
  const auto i = static_cast<std::size_t>(std::floor(std::clamp(t, 0.0, 1.0) * static_cast<double>(n)));
  return std::min(i, n - 1);
}

}  // namespace

void ParamDomain::validate() const {
  if (name.empty()) throw ConfigError("search space: parameter without a name");
  switch (kind) {
    case ParamKind::Categorical:
      if (choices.empty()) throw ConfigError("search space: '" + name + "' has no choices");
      return;
    case ParamKind::Int:
      if (lo != std::floor(lo) || hi != std::floor(hi)) throw ConfigError("search space: '" + name + "' bounds must be integers");
      break;
    case ParamKind::LogReal:
      if (!(lo > 0)) throw ConfigError("search space: '" + name + "' log range needs lo > 0");
      break;
    case ParamKind::Real: break;
  }
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo <= hi))
    throw ConfigError("search space: '" + name + "' needs finite lo <= hi");
}

nlohmann::json ParamDomain::from_unit(double t) const {
  t = std::clamp(t, 0.0, 1.0);
  switch (kind) {
    case ParamKind::Int: {
      const auto n = static_cast<std::size_t>(hi - lo) + 1;
      return static_cast<long>(lo) + static_cast<long>(bucket(t, n));
    }
    case ParamKind::LogReal: return std::clamp(lo * std::pow(hi / lo, t), lo, hi);
    case ParamKind::Real: return std::clamp(lo + t * (hi - lo), lo, hi);
    case ParamKind::Categorical: return choices[bucket(t, choices.size())];
  }
  return nullptr;
}

double ParamDomain::to_unit(const nlohmann::json& v) const {
  if (!contains(v)) throw ConfigError("search space: value of '" + name + "' outside its domain");
  switch (kind) {
    case ParamKind::Int: return (v.get<double>() - lo + 0.5) / (hi - lo + 1);
    case ParamKind::LogReal:
      return hi == lo ? 0.5 : (std::log(v.get<double>()) - std::log(lo)) / (std::log(hi) - std::log(lo));
    case ParamKind::Real: return hi == lo ? 0.5 : (v.get<double>() - lo) / (hi - lo);
    case ParamKind::Categorical: {
      const auto it = std::find(choices.begin(), choices.end(), v.get<std::string>());
      return (static_cast<double>(it - choices.begin()) + 0.5) / static_cast<double>(choices.size());
    }
  }
  return 0.0;
}

bool ParamDomain::contains(const nlohmann::json& v) const {
  switch (kind) {
    case ParamKind::Int:
      return v.is_number_integer() && v.get<double>() >= lo && v.get<double>() <= hi;
    case ParamKind::LogReal:
    case ParamKind::Real:
      return v.is_number() && v.get<double>() >= lo && v.get<double>() <= hi;
    case ParamKind::Categorical:
      return v.is_string() && std::find(choices.begin(), choices.end(), v.get<std::string>()) != choices.end();
  }
  return false;
}

void SearchSpace::validate() const {
  if (params.empty()) throw ConfigError("search space: no parameters");
  std::set<std::string> names;
  for (const auto& p : params) {
    p.validate();
    if (!names.insert(p.name).second) throw ConfigError("search space: duplicate parameter '" + p.name + "'");
  }
}

nlohmann::json SearchSpace::from_unit(const Eigen::VectorXd& t) const {
  if (static_cast<std::size_t>(t.size()) != params.size()) throw ShapeError("search space: point dimension mismatch");
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < params.size(); ++i) j[params[i].name] = params[i].from_unit(t(static_cast<Eigen::Index>(i)));
  return j;
}

Eigen::VectorXd SearchSpace::to_unit(const nlohmann::json& config) const {
  Eigen::VectorXd t(static_cast<Eigen::Index>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!config.contains(params[i].name)) throw ConfigError("search space: config misses '" + params[i].name + "'");
    t(static_cast<Eigen::Index>(i)) = params[i].to_unit(config[params[i].name]);
  }
  return t;
}

bool SearchSpace::contains(const nlohmann::json& config) const {
  if (!config.is_object() || config.size() != params.size()) return false;
  for (const auto& p : params)
    if (!config.contains(p.name) || !p.contains(config[p.name])) return false;
  return true;
}

nlohmann::json SearchSpace::sample(Rng& rng) const {
  Eigen::VectorXd t(static_cast<Eigen::Index>(params.size()));
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = uniform01(rng);
  return from_unit(t);
}

SearchSpace SearchSpace::pgnn_default() {
  SearchSpace s;
  s.params = {{"width", ParamKind::Int, 2, 128, {}},
              {"layers", ParamKind::Int, 1, 3, {}},
              {"learning_rate", ParamKind::LogReal, 1e-4, 1e-2, {}},
              {"lambda_phy", ParamKind::Real, 0.01, 0.99, {}},
              {"activation", ParamKind::Categorical, 0, 0, {"tanh", "relu"}}};
  return s;
}

void to_json(nlohmann::json& j, const SearchSpace& s) {
  j = nlohmann::json::object();
  j["params"] = nlohmann::json::array();
  for (const auto& p : s.params) {
    nlohmann::json e = {{"name", p.name}, {"kind", kind_name(p.kind)}};
    if (p.kind == ParamKind::Categorical) e["choices"] = p.choices;
    else {
      e["lo"] = p.lo;
      e["hi"] = p.hi;
    }
    j["params"].push_back(e);
  }
}

void from_json(const nlohmann::json& j, SearchSpace& s) {
  require_keys_subset(j, {"params"}, "search space");
  s.params.clear();
  for (const auto& e : read_required<nlohmann::json>(j, "params", "search space")) {
    require_keys_subset(e, {"name", "kind", "lo", "hi", "choices"}, "search space parameter");
    ParamDomain p;
    p.name = read_required<std::string>(e, "name", "search space parameter");
    p.kind = kind_from_name(read_required<std::string>(e, "kind", "search space parameter"));
    if (p.kind == ParamKind::Categorical) {
      p.choices = read_required<std::vector<std::string>>(e, "choices", "search space parameter");
    } else {
      p.lo = read_required<double>(e, "lo", "search space parameter");
      p.hi = read_required<double>(e, "hi", "search space parameter");
    }
    s.params.push_back(std::move(p));
  }
  s.validate();
}

std::string to_string(SearchStrategy s) { return s == SearchStrategy::Random ? "random" : "surrogate"; }

SearchStrategy search_strategy_from_string(const std::string& s) {
  if (s == "random") return SearchStrategy::Random;
  if (s == "surrogate") return SearchStrategy::Surrogate;
  throw ConfigError("unknown search strategy '" + s + "'");
}

nlohmann::json trial_to_json(const TrialRecord& r, bool include_wall_time) {
  nlohmann::json j = {{"index", r.index}, {"config", r.config}, {"seed", r.seed}, {"failed", r.failed}};
  if (r.failed) j["error"] = r.error;
  else {
    j["objective"] = r.objective;
    j["L_error"] = r.L_error;
    j["L_phy"] = r.L_phy;
  }
  if (include_wall_time) j["wall_time"] = r.wall_time;
  return j;
}

std::string trials_to_jsonl(const std::vector<TrialRecord>& records, bool include_wall_time) {
  std::string out;
  for (const auto& r : records) out += trial_to_json(r, include_wall_time).dump() + "\n";
  return out;
}

GaussianProcess::GaussianProcess(double length_scale, double noise) : ell_(length_scale), noise_(noise) {
  if (!(length_scale > 0) || !(noise >= 0)) throw ConfigError("gp: length scale must be > 0 and noise >= 0");
}

double GaussianProcess::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return std::exp(-(a - b).squaredNorm() / (2.0 * ell_ * ell_));
}

void GaussianProcess::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size() || X.rows() == 0) throw ShapeError("gp: need one target per point");
  X_ = X;
  y_mean_ = y.mean();
  y_std_ = y.size() > 1 ? std::sqrt((y.array() - y_mean_).square().sum() / static_cast<double>(y.size())) : 1.0;
  if (!(y_std_ > 0)) y_std_ = 1.0;
  const Eigen::VectorXd ys = (y.array() - y_mean_) / y_std_;
  Eigen::MatrixXd K(X.rows(), X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel(X.row(i).transpose(), X.row(j).transpose());
  K.diagonal().array() += noise_;
  llt_.compute(K);
  if (llt_.info() != Eigen::Success) throw DomainError("gp: kernel matrix is not positive definite");
  alpha_ = llt_.solve(ys);
}

std::pair<double, double> GaussianProcess::predict(const Eigen::VectorXd& x) const {
  Eigen::VectorXd k(X_.rows());
  for (Eigen::Index i = 0; i < X_.rows(); ++i) k(i) = kernel(X_.row(i).transpose(), x);
  const double mean = k.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  const double var = std::max(0.0, 1.0 - v.squaredNorm());
  return {mean * y_std_ + y_mean_, std::sqrt(var) * y_std_};
}

double expected_improvement(double mean, double sd, double best) {
  const double gain = best - mean;
  if (!(sd > 0)) return std::max(gain, 0.0);
  const double z = gain / sd;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return gain * cdf + sd * pdf;
}

SearchResult search(const SearchSpace& space, const Objective& objective, const SearchOptions& opts) {
  space.validate();
  if (opts.budget < 1) throw ConfigError("search: budget must be >= 1");
  if (opts.candidates < 1) throw ConfigError("search: candidates must be >= 1");
  Rng rng(opts.seed);
  SearchResult res;
  std::vector<Eigen::VectorXd> xs;
  std::vector<double> ys;
  for (int i = 0; i < opts.budget; ++i) {
    nlohmann::json config;
    if (opts.strategy == SearchStrategy::Random || i < opts.initial_random || ys.empty()) {
      config = space.sample(rng);
    } else {
      GaussianProcess gp(opts.length_scale, opts.noise);
      Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(space.dim()));
      for (std::size_t r = 0; r < xs.size(); ++r) X.row(static_cast<Eigen::Index>(r)) = xs[r].transpose();
      gp.fit(X, Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size())));
      const double best = *std::min_element(ys.begin(), ys.end());
      Eigen::VectorXd pick, t(static_cast<Eigen::Index>(space.dim()));
      double best_ei = -1.0;
      for (int c = 0; c < opts.candidates; ++c) {
        for (Eigen::Index d = 0; d < t.size(); ++d) t(d) = uniform01(rng);
        // Score the point the candidate actually maps to.
        const Eigen::VectorXd snapped = space.to_unit(space.from_unit(t));
        const auto [mu, sd] = gp.predict(snapped);
        const double ei = expected_improvement(mu, sd, best);
        if (ei > best_ei) {
          best_ei = ei;
          pick = t;
        }
      }
      config = space.from_unit(pick);
    }

    TrialRecord rec;
    rec.index = i;
    rec.config = config;
    rec.seed = opts.seed + static_cast<std::uint64_t>(i);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const TrialOutcome out = objective(config, rec.seed);
      if (!std::isfinite(out.objective)) throw DivergenceError("objective is not finite", i);
      rec.objective = out.objective;
      rec.L_error = out.L_error;
      rec.L_phy = out.L_phy;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!rec.failed) {
      xs.push_back(space.to_unit(config));
      ys.push_back(rec.objective);
      if (res.records.empty() || res.best.failed || rec.objective < res.best.objective) res.best = rec;
    } else if (res.records.empty()) {
      res.best = rec;
    }
    res.records.push_back(std::move(rec));
  }
  if (ys.empty()) {
    std::string msg = "search: all " + std::to_string(opts.budget) + " trials failed";
    for (std::size_t i = 0; i < res.records.size() && i < 3; ++i) msg += "; trial " + std::to_string(i) + ": " + res.records[i].error;
    throw SearchError(msg);
  }
  return res;
}

void apply_search_config(const nlohmann::json& config, PgnnConfig& cfg) {
  require_keys_subset(config, {"width", "layers", "learning_rate", "lambda_phy", "activation"}, "search config");
  int width = cfg.hidden.empty() ? 16 : cfg.hidden.front();
  int layers = static_cast<int>(cfg.hidden.size());
  read_optional(config, "width", width, "search config");
  read_optional(config, "layers", layers, "search config");
  if (width < 1 || layers < 1) throw ConfigError("search config: width and layers must be >= 1");
  cfg.hidden.assign(static_cast<std::size_t>(layers), width);
  read_optional(config, "learning_rate", cfg.train.learning_rate, "search config");
  read_optional(config, "lambda_phy", cfg.lambda_phy, "search config");
  if (config.contains("activation"))
    cfg.activation = activation_from_string(read_required<std::string>(config, "activation", "search config"));
}

namespace {

struct SharedTable {
  Dataset data;
  TrainingTable table;
  double dt;
};

std::pair<double, double> validation_components(const PgnnConfig& cfg, const SharedTable& s, const Mlp& net) {
  const TrainData td{s.table.inputs, s.table.targets, s.table.train_rows, s.table.val_rows};
  const LossResult r = evaluate_loss(net, td, pgnn_loss(cfg, s.table, s.dt), s.table.val_rows);
  return {r.components.at(0), r.components.at(1)};
}

std::shared_ptr<const SharedTable> share_table(const PgnnConfig& base, const Dataset& data) {
  auto s = std::make_shared<SharedTable>();
  s->data = data;
  s->table = build_training_table(base, data);
  s->dt = base.dt == 0.0 ? data.dt : base.dt;
  return s;
}

}  // namespace

Objective pgnn_objective(const PgnnConfig& base, const Dataset& data) {
  auto shared = share_table(base, data);
  return [base, shared](const nlohmann::json& config, std::uint64_t seed) {
    PgnnConfig cfg = base;
    apply_search_config(config, cfg);
    cfg.train.seed = seed;
    cfg.init_seed = seed;
    const auto r = train_pgnn(cfg, shared->data, shared->table);
    TrialOutcome out;
    out.objective = pgnn_validation_rmse(r.model, shared->data);
    std::tie(out.L_error, out.L_phy) = validation_components(cfg, *shared, r.model.net);
    return out;
  };
}

void flag_nondominated(std::vector<ParetoPoint>& points) {
  for (auto& p : points) {
    if (p.failed) {
      p.nondominated = false;
      continue;
    }
    bool dominated = false;
    for (const auto& q : points) {
      if (&q == &p || q.failed) continue;
      if (q.L_error <= p.L_error && q.L_phy <= p.L_phy && (q.L_error < p.L_error || q.L_phy < p.L_phy)) {
        dominated = true;
        break;
      }
    }
    p.nondominated = !dominated;
  }
}

std::vector<double> dedupe_lambda_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("pareto sweep: empty lambda grid");
  std::vector<double> out;
  for (double l : grid) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("pareto sweep: lambda " + format_double(l) + " outside [0, 1]");
    if (std::find(out.begin(), out.end(), l) != out.end()) {
      warn("pareto sweep: duplicate lambda " + format_double(l) + " dropped");
      continue;
    }
    out.push_back(l);
  }
  return out;
}

std::vector<ParetoPoint> pareto_sweep(const std::vector<double>& grid, const PgnnConfig& fixed, const Dataset& data) {
  const auto lambdas = dedupe_lambda_grid(grid);
  const auto shared = share_table(fixed, data);
  std::vector<ParetoPoint> points;
  for (double l : lambdas) {
    ParetoPoint p;
    p.lambda_phy = l;
    try {
      PgnnConfig cfg = fixed;
      cfg.lambda_phy = l;
      const auto r = train_pgnn(cfg, shared->data, shared->table);
      std::tie(p.L_error, p.L_phy) = validation_components(cfg, *shared, r.model.net);
      if (!std::isfinite(p.L_error) || !std::isfinite(p.L_phy)) throw DivergenceError("non-finite validation loss", 0);
    } catch (const std::exception& e) {
      p.failed = true;
      p.error = e.what();
    }
    points.push_back(std::move(p));
  }
  flag_nondominated(points);
  return points;
}

std::string pareto_to_csv(const std::vector<ParetoPoint>& points) {
  std::string out = "lambda_phy,L_error,L_phy,nondominated\n";
  for (const auto& p : points) {
    out += format_double(p.lambda_phy) + ",";
    out += p.failed ? std::string("nan,nan,0\n")
                    : format_double(p.L_error) + "," + format_double(p.L_phy) + "," + (p.nondominated ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace pgnnl
