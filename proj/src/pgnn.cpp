#include "pgnnl/pgnn.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"

namespace pgnnl {

Eigen::Index InputLayout::width(Eigen::Index input_dim, Eigen::Index state_dim) const {
  return (u ? input_dim : 0) + (x_phy ? state_dim : 0) + (y_prev ? state_dim : 0);
}

std::string to_string(const InputLayout& layout) {
  std::vector<std::string> parts;
  if (layout.u) parts.push_back("u");
  if (layout.x_phy) parts.push_back("x_phy");
  if (layout.y_prev) parts.push_back("y_prev");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

InputLayout input_layout_from_string(const std::string& s) {
  InputLayout layout{false, false, false};
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "u") layout.u = true;
    else if (tok == "x_phy") layout.x_phy = true;
    else if (tok == "y_prev") layout.y_prev = true;
    else throw ConfigError("input layout: unknown block '" + tok + "'");
  }
  if (!layout.u && !layout.x_phy && !layout.y_prev) throw ConfigError("input layout: no blocks");
  return layout;
}

void PgnnConfig::validate() const {
  if (layout.x_phy && !prior) throw ConfigError("pgnn: layout uses x_phy but no prior model is configured");
  if (!(lambda_phy >= 0.0 && lambda_phy <= 1.0)) throw ConfigError("pgnn: lambda_phy must lie in [0, 1]");
  if (hidden.empty()) throw ConfigError("pgnn: at least one hidden layer is required");
  for (int h : hidden)
    if (h <= 0) throw ConfigError("pgnn: hidden widths must be positive");
  if (dt < 0) throw ConfigError("pgnn: dt must be >= 0");
  if (prior_integrator.substeps < 1) throw ConfigError("pgnn: substeps must be >= 1");
  if (output_bound && !(*output_bound > 0)) throw ConfigError("pgnn: output_bound must be > 0");
  if (residual && !prior_anchor && !layout.y_prev) throw ConfigError("pgnn: residual output needs the y_prev block");
  if (prior_anchor && (!residual || !prior)) throw ConfigError("pgnn: prior_anchor needs residual output and a prior");
}

Eigen::MatrixXd simulate_prior_blocks(const PlantModel& prior, const Dataset& data, const IntegratorOptions& opts) {
  if (prior.state_dim() != data.output_dim())
    throw ConfigError("prior state dimension does not match the measured outputs");
  Eigen::MatrixXd out(data.size(), data.output_dim());
  for (const auto& [b, e] : data.trajectory_ranges()) {
    const Eigen::Index n = e - b;
    const Eigen::VectorXd u = data.u.col(0).segment(b, n);
    const Eigen::VectorXd x0 = data.y.row(b).transpose();
    const Trajectory tr = integrate(prior, x0, std::span<const double>(u.data(), static_cast<std::size_t>(n)),
                                    data.dt, static_cast<int>(n - 1), opts);
    for (Eigen::Index k = 0; k < n; ++k) out.row(b + k) = prior.output(tr.x.row(k).transpose()).transpose();
  }
  return out;
}

namespace {

Standardizer fit_rows(const Eigen::MatrixXd& v, const std::vector<Eigen::Index>& rows) {
  return Standardizer::fit(v(rows, Eigen::all));
}

double resolve_dt(const PgnnConfig& cfg, const Dataset& data) {
  if (cfg.dt == 0.0) return data.dt;
  if (std::abs(cfg.dt - data.dt) > 1e-12 * std::max(cfg.dt, data.dt))
    throw ConfigError("pgnn: dataset dt " + format_double(data.dt) + " differs from configured dt " +
                      format_double(cfg.dt));
  return cfg.dt;
}

}  // namespace

TrainingTable build_training_table(const PgnnConfig& cfg, const Dataset& data) {
  cfg.validate();
  data.validate();
  resolve_dt(cfg, data);
  const Eigen::Index m = data.input_dim(), l = data.output_dim();
  TrainingTable tab;

  for (const auto& [b, e] : data.trajectory_ranges()) {
    for (Eigen::Index k = b + 1; k < e; ++k) {
      const auto row = static_cast<Eigen::Index>(tab.record.size());
      tab.prev_row.push_back(k - 1 > b ? row - 1 : -1);
      tab.record.push_back(k);
      switch (data.split[static_cast<std::size_t>(k)]) {
        case Split::Train: tab.train_rows.push_back(row); break;
        case Split::Val: tab.val_rows.push_back(row); break;
        case Split::Test: tab.test_rows.push_back(row); break;
      }
    }
  }
  if (tab.train_rows.empty() || tab.val_rows.empty()) throw ConfigError("pgnn: dataset has no train or validation rows");

  const auto n_rows = static_cast<Eigen::Index>(tab.record.size());
  std::vector<Eigen::Index> prev_records(tab.record.size());
  for (std::size_t i = 0; i < tab.record.size(); ++i) prev_records[i] = tab.record[i] - 1;
  tab.u_rows = data.u(prev_records, Eigen::all);
  tab.u_prev = tab.u_rows.col(0);
  const Eigen::MatrixXd y_curr = data.y(tab.record, Eigen::all);
  const Eigen::MatrixXd y_prev = data.y(prev_records, Eigen::all);

  std::vector<Eigen::Index> train_records;
  for (auto r : tab.train_rows) train_records.push_back(tab.record[static_cast<std::size_t>(r)]);

  // Standardizers come from train rows only: inputs as the network sees them,
  // outputs from the targets.
  tab.u_scale = fit_rows(tab.u_rows, tab.train_rows);
  tab.y_scale = fit_rows(y_curr, tab.train_rows);

  Eigen::MatrixXd x_phy_rows;
  if (cfg.prior) {
    tab.x_phy = simulate_prior_blocks(*cfg.prior, data, cfg.prior_integrator);
    x_phy_rows = tab.x_phy(tab.record, Eigen::all);
    tab.x_phy_scale = fit_rows(x_phy_rows, tab.train_rows);
  }

  tab.inputs.resize(n_rows, cfg.layout.width(m, l));
  Eigen::Index col = 0;
  if (cfg.layout.u) {
    tab.inputs.middleCols(col, m) = tab.u_scale.apply(tab.u_rows);
    col += m;
  }
  if (cfg.layout.x_phy) {
    tab.inputs.middleCols(col, l) = tab.x_phy_scale.apply(x_phy_rows);
    col += l;
  }
  if (cfg.layout.y_prev) tab.inputs.middleCols(col, l) = tab.y_scale.apply(y_prev);
  tab.targets = tab.y_scale.apply(y_curr);
  tab.z_prev = tab.y_scale.apply(y_prev);
  tab.z_base = cfg.prior_anchor ? tab.y_scale.apply(x_phy_rows) : tab.z_prev;
  tab.delta_scale = fit_rows(tab.targets - tab.z_base, tab.train_rows);
  return tab;
}

Eigen::MatrixXd compose_output(bool residual, const Standardizer& delta_scale, const Eigen::MatrixXd& net_out,
                               const Eigen::MatrixXd& z_prev) {
  if (!residual) return net_out;
  return z_prev + delta_scale.invert(net_out);
}

LossSpec pgnn_loss(const PgnnConfig& cfg, const TrainingTable& table, double dt) {
  ComposedLossConfig lc;
  lc.lambda_phy = cfg.lambda_phy;
  if (cfg.energy) lc.energy = cfg.energy;
  else if (cfg.prior && cfg.prior->id() != PlantId::Custom) lc.energy = EnergyModel::for_plant(*cfg.prior);
  if (cfg.output_bound) lc.constraints.push_back(bound_constraint(0, *cfg.output_bound));
  lc.output_scale = table.y_scale;

  LossSpec spec;
  spec.component_names = {"L_error", "L_phy"};
  spec.evaluate = [lc, prev = table.prev_row, u_prev = table.u_prev, u_rows = table.u_rows, z_base = table.z_base,
                   residual = cfg.residual, ds = table.delta_scale, dt](const LossBatch& b) {
    std::vector<StepPair> pairs;
    for (std::size_t i = 1; i < b.rows.size(); ++i)
      if (prev[static_cast<std::size_t>(b.rows[i])] == b.rows[i - 1])
        pairs.push_back({static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(i), u_prev(b.rows[i])});
    const std::vector<Eigen::Index> rows(b.rows.begin(), b.rows.end());
    const Eigen::MatrixXd u = u_rows(rows, Eigen::all);
    if (!residual) {
      auto r = composed_loss(lc, b.predictions, b.targets, u, pairs, dt);
      return LossResult{r.total, {r.error_term, r.physics_term}, std::move(r.gradient)};
    }
    auto r = composed_loss(lc, compose_output(true, ds, b.predictions, z_base(rows, Eigen::all)), b.targets, u,
                           pairs, dt);
    return LossResult{r.total, {r.error_term, r.physics_term}, r.gradient * ds.std.asDiagonal()};
  };
  return spec;
}

PgnnTrainResult train_pgnn(const PgnnConfig& cfg, const Dataset& data, const TrainingTable& table) {
  cfg.validate();
  const double dt = resolve_dt(cfg, data);
  std::vector<int> sizes{static_cast<int>(table.inputs.cols())};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(static_cast<int>(table.targets.cols()));
  const Mlp init = init_mlp(sizes, {cfg.activation}, cfg.init_seed);

  TrainData td{table.inputs, table.targets, table.train_rows, table.val_rows};
  TrainResult tr = train(init, td, pgnn_loss(cfg, table, dt), cfg.train);

  PgnnTrainResult out;
  out.history = std::move(tr.history);
  auto& m = out.model;
  m.method = cfg.layout.x_phy || cfg.lambda_phy > 0 ? "pgnn-l" : "nn";
  m.net = std::move(tr.net);
  m.layout = cfg.layout;
  m.residual = cfg.residual;
  m.prior_anchor = cfg.prior_anchor;
  if (cfg.residual) m.delta_scale = table.delta_scale;
  m.u_scale = table.u_scale;
  m.y_scale = table.y_scale;
  if (cfg.layout.x_phy || cfg.prior_anchor) {
    m.x_phy_scale = table.x_phy_scale;
    m.prior = cfg.prior;
    m.prior_spec = cfg.prior_spec;
    m.prior_integrator = cfg.prior_integrator;
  }
  m.lambda_phy = cfg.lambda_phy;
  m.dt = dt;
  return out;
}

PgnnTrainResult train_pgnn(const PgnnConfig& cfg, const Dataset& data) {
  return train_pgnn(cfg, data, build_training_table(cfg, data));
}

PgnnTrainResult train_baseline_nn(PgnnConfig cfg, const Dataset& data) {
  if (cfg.lambda_phy != 0.0) warn("nn: lambda_phy is ignored for the plain network");
  cfg.lambda_phy = 0.0;
  cfg.layout = InputLayout::baseline();
  cfg.prior_anchor = false;
  cfg.output_bound.reset();
  auto r = train_pgnn(cfg, data);
  r.model.method = "nn";
  return r;
}

Eigen::MatrixXd predict_rollout(const PgnnModel& model, std::span<const double> u, const Eigen::VectorXd& x0,
                                int n_steps) {
  const Eigen::Index l = model.y_scale.channels();
  if (x0.size() != l) throw ShapeError("predict_rollout: x0 width does not match the model");
  if (n_steps < 0 || u.size() < static_cast<std::size_t>(n_steps))
    throw ShapeError("predict_rollout: need at least n_steps input samples");
  if (model.u_scale.channels() != 1) throw ShapeError("predict_rollout: single-input models only");
  if (!x0.allFinite()) throw DomainError("predict_rollout: non-finite x0");

  Eigen::MatrixXd x_phy;
  if (model.layout.x_phy || model.prior_anchor) {
    if (!model.prior) throw ConfigError("predict_rollout: model needs its prior");
    const Trajectory tr = integrate(*model.prior, x0, u.first(static_cast<std::size_t>(n_steps)), model.dt, n_steps,
                                    model.prior_integrator);
    x_phy.resize(n_steps + 1, l);
    for (Eigen::Index k = 0; k <= n_steps; ++k) x_phy.row(k) = model.prior->output(tr.x.row(k).transpose()).transpose();
  }

  Eigen::MatrixXd out(n_steps + 1, l);
  out.row(0) = x0.transpose();
  Eigen::RowVectorXd z_prev = model.y_scale.apply_row(x0.transpose());
  Eigen::MatrixXd in(1, model.net.input_dim());
  for (int k = 1; k <= n_steps; ++k) {
    Eigen::Index col = 0;
    if (model.layout.u) in(0, col++) = (u[static_cast<std::size_t>(k - 1)] - model.u_scale.mean(0)) / model.u_scale.std(0);
    if (model.layout.x_phy) {
      in.block(0, col, 1, l) = model.x_phy_scale.apply_row(x_phy.row(k));
      col += l;
    }
    if (model.layout.y_prev) in.block(0, col, 1, l) = z_prev;
    const Eigen::RowVectorXd z =
        compose_output(model.residual, model.delta_scale, forward(model.net, in),
                       model.prior_anchor ? model.y_scale.apply_row(x_phy.row(k)) : z_prev)
            .row(0);
    if (!z.allFinite()) throw DivergenceError("predict_rollout: non-finite prediction", k);
    z_prev = z;
    out.row(k) = model.y_scale.invert_row(z);
  }
  return out;
}

double pgnn_validation_rmse(const PgnnModel& model, const Dataset& data) {
  double sum = 0.0;
  Eigen::Index count = 0;
  for (const auto& [b, e] : data.trajectory_ranges()) {
    Eigen::Index v0 = -1, v1 = -1;
    for (Eigen::Index k = b; k < e; ++k)
      if (data.split[static_cast<std::size_t>(k)] == Split::Val) {
        if (v0 < 0) v0 = k;
        else if (k != v1 + 1) throw ConfigError("pgnn: validation records of a trajectory are not contiguous");
        v1 = k;
      }
    if (v0 < 0 || v1 == v0) continue;
    const auto n = static_cast<int>(v1 - v0);
    const Eigen::VectorXd u = data.u.col(0).segment(v0, n);
    Eigen::MatrixXd pred;
    try {
      pred = predict_rollout(model, std::span<const double>(u.data(), static_cast<std::size_t>(n)),
                             data.y.row(v0).transpose(), n);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    }
    sum += (pred.col(0) - data.y.col(0).segment(v0, n + 1)).squaredNorm();
    count += n + 1;
  }
  if (count == 0) throw ConfigError("pgnn: dataset has no validation window to score");
  const double r = std::sqrt(sum / static_cast<double>(count));
  return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

namespace {

nlohmann::json integrator_to_json(const IntegratorOptions& o) {
  return {{"scheme", o.scheme == Scheme::Rk4 ? "rk4" : "euler"}, {"substeps", o.substeps}};
}

IntegratorOptions integrator_from_json(const nlohmann::json& j) {
  require_keys_subset(j, {"scheme", "substeps"}, "integrator");
  IntegratorOptions o;
  std::string scheme = "rk4";
  read_optional(j, "scheme", scheme, "integrator");
  if (scheme == "rk4") o.scheme = Scheme::Rk4;
  else if (scheme == "euler") o.scheme = Scheme::Euler;
  else throw ConfigError("integrator: scheme must be 'rk4' or 'euler'");
  read_optional(j, "substeps", o.substeps, "integrator");
  if (o.substeps < 1) throw ConfigError("integrator: substeps must be >= 1");
  return o;
}

}  // namespace

nlohmann::json pgnn_sidecar(const PgnnModel& model) {
  nlohmann::json j = {{"method", model.method},
                      {"layout", to_string(model.layout)},
                      {"u_scale", model.u_scale},
                      {"y_scale", model.y_scale},
                      {"residual", model.residual},
                      {"prior_anchor", model.prior_anchor},
                      {"lambda_phy", model.lambda_phy},
                      {"dt", model.dt}};
  if (model.residual) j["delta_scale"] = model.delta_scale;
  if (model.layout.x_phy || model.prior_anchor) {
    j["x_phy_scale"] = model.x_phy_scale;
    j["prior"] = plant_to_json(*model.prior);
    j["prior_degradation"] = model.prior_spec;
    j["prior_integrator"] = integrator_to_json(model.prior_integrator);
  }
  return j;
}

PgnnModel pgnn_from_json(const nlohmann::json& checkpoint, const nlohmann::json& sidecar) {
  require_keys_subset(sidecar,
                      {"method", "layout", "u_scale", "y_scale", "residual", "prior_anchor", "delta_scale", "x_phy_scale", "lambda_phy", "dt", "prior",
                       "prior_degradation", "prior_integrator"},
                      "pgnn sidecar");
  PgnnModel m;
  m.net = checkpoint.get<Mlp>();
  m.method = read_required<std::string>(sidecar, "method", "pgnn sidecar");
  m.layout = input_layout_from_string(read_required<std::string>(sidecar, "layout", "pgnn sidecar"));
  m.u_scale = read_required<Standardizer>(sidecar, "u_scale", "pgnn sidecar");
  m.y_scale = read_required<Standardizer>(sidecar, "y_scale", "pgnn sidecar");
  m.lambda_phy = read_required<double>(sidecar, "lambda_phy", "pgnn sidecar");
  m.dt = read_required<double>(sidecar, "dt", "pgnn sidecar");
  read_optional(sidecar, "residual", m.residual, "pgnn sidecar");
  read_optional(sidecar, "prior_anchor", m.prior_anchor, "pgnn sidecar");
  if (m.residual) m.delta_scale = read_required<Standardizer>(sidecar, "delta_scale", "pgnn sidecar");
  if (m.layout.x_phy || m.prior_anchor) {
    m.x_phy_scale = read_required<Standardizer>(sidecar, "x_phy_scale", "pgnn sidecar");
    m.prior = plant_from_json(read_required<nlohmann::json>(sidecar, "prior", "pgnn sidecar"));
    read_optional(sidecar, "prior_degradation", m.prior_spec, "pgnn sidecar");
    if (sidecar.contains("prior_integrator")) m.prior_integrator = integrator_from_json(sidecar["prior_integrator"]);
  }
  const Eigen::Index l = m.y_scale.channels();
  if (m.net.input_dim() != m.layout.width(m.u_scale.channels(), l) || m.net.output_dim() != l)
    throw ConfigError("pgnn sidecar: network widths do not match the layout");
  if (!(m.dt > 0)) throw ConfigError("pgnn sidecar: dt must be > 0");
  return m;
}

std::filesystem::path pgnn_sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".sidecar.json");
  return p;
}

void save_pgnn(const PgnnModel& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
  write_file_atomic(path, mlp_checkpoint(model.net, metadata.is_null() ? nlohmann::json::object() : metadata).dump(2) + "\n");
  write_file_atomic(pgnn_sidecar_path(path), pgnn_sidecar(model).dump(2) + "\n");
}

PgnnModel load_pgnn(const std::filesystem::path& path) {
  nlohmann::json ck, side;
  try {
    ck = nlohmann::json::parse(read_file(path));
    side = nlohmann::json::parse(read_file(pgnn_sidecar_path(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("pgnn model: " + std::string(e.what()));
  }
  return pgnn_from_json(ck, side);
}

}  // namespace pgnnl
