#include "pgnnl/plants.hpp"

#include <algorithm>
#include <sstream>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"

namespace pgnnl {

namespace {

void require_finite(const Eigen::Vector2d& x, double u, const char* who) {
  if (!x.allFinite() || !std::isfinite(u)) {
    std::ostringstream msg;
    msg << who << ": non-finite argument x=(" << x(0) << ", " << x(1) << "), u=" << u;
    throw DomainError(msg.str());
  }
}

bool uses_inside_limits(const ValveParams& p) {
  return p.limits.has_value() && p.placement == LimitPlacement::InsideOde;
}

}  // namespace

void GolfParams::validate() const {
  if (!(m > 0 && a > 0 && J > 0 && g > 0)) throw ConfigError("golf params: m, a, J, g must be > 0");
  if (!(d >= 0 && r >= 0 && mu >= 0)) throw ConfigError("golf params: d, r, mu must be >= 0");
  if (!(sign_eps > 0)) throw ConfigError("golf params: sign_eps must be > 0");
}

void ValveParams::validate() const {
  if (!(f_V > 0)) throw ConfigError("valve params: f_V must be > 0");
  if (!(D_V >= 0)) throw ConfigError("valve params: D_V must be >= 0");
  if (!std::isfinite(K_V)) throw ConfigError("valve params: K_V must be finite");
  if (!(u_min < u_max)) throw ConfigError("valve params: u range must be a nonempty interval");
  if (!(y_max > 0)) throw ConfigError("valve params: y_max must be > 0");
  if (limits && !(limits->v_max > 0 && limits->a_max > 0))
    throw ConfigError("valve params: v_max and a_max must be > 0");
}

ValveLimits ValveParams::default_limits(double y_max, double f_V) {
  const double w = 2.0 * M_PI * f_V;
  return {2.0 * y_max * w * 0.05, y_max * w * w * 0.1};
}

Eigen::Vector2d golf_dynamics(const Eigen::Vector2d& x, double u, const GolfParams& p) {
  require_finite(x, u, "golf_dynamics");
  return golf_rhs<double>(x, u, p);
}

Eigen::Vector2d valve_project(const Eigen::Vector2d& x, const ValveParams& p) {
  if (!p.limits) return x;
  Eigen::Vector2d y;
  y(0) = std::clamp(x(0), -p.y_max, p.y_max);
  y(1) = std::clamp(x(1), -p.limits->v_max, p.limits->v_max);
  if ((y(0) >= p.y_max && y(1) > 0) || (y(0) <= -p.y_max && y(1) < 0)) y(1) = 0.0;
  return y;
}

Eigen::Vector2d valve_dynamics(const Eigen::Vector2d& x, double u, const ValveParams& p) {
  require_finite(x, u, "valve_dynamics");
  if (!uses_inside_limits(p)) return valve_rhs<double>(x, u, p);
  const Eigen::Vector2d xc = valve_project(x, p);
  Eigen::Vector2d dx = valve_rhs<double>(xc, u, p);
  dx(1) = std::clamp(dx(1), -p.limits->a_max, p.limits->a_max);
  if ((xc(0) >= p.y_max && dx(1) > 0) || (xc(0) <= -p.y_max && dx(1) < 0)) dx(1) = 0.0;
  return dx;
}

std::string to_string(PlantId id) {
  switch (id) {
    case PlantId::Golf: return "golf";
    case PlantId::Valve: return "valve";
    case PlantId::Custom: return "custom";
  }
  return "custom";
}

PlantId plant_id_from_string(std::string_view name) {
  if (name == "golf") return PlantId::Golf;
  if (name == "valve") return PlantId::Valve;
  throw ConfigError("unknown plant id '" + std::string(name) + "'");
}

PlantModel::PlantModel(std::string name, int state_dim, StateRhs rhs, std::vector<std::string> labels)
    : id_(PlantId::Custom), name_(std::move(name)), state_dim_(state_dim), labels_(std::move(labels)),
      rhs_(std::move(rhs)) {
  if (state_dim_ <= 0) throw ConfigError("plant state_dim must be positive");
  if (labels_.empty())
    for (int i = 0; i < state_dim_; ++i) labels_.push_back("x" + std::to_string(i + 1));
}

PlantModel PlantModel::golf(const GolfParams& p) {
  p.validate();
  PlantModel m;
  m.id_ = PlantId::Golf;
  m.name_ = "golf";
  m.state_dim_ = 2;
  m.labels_ = {"phi [rad]", "phi_dot [rad/s]"};
  m.params_ = p;
  m.rhs_ = [p](const Eigen::VectorXd& x, double u, double) -> Eigen::VectorXd {
    return golf_dynamics(Eigen::Vector2d(x(0), x(1)), u, p);
  };
  return m;
}

PlantModel PlantModel::valve(const ValveParams& p) {
  p.validate();
  PlantModel m;
  m.id_ = PlantId::Valve;
  m.name_ = "valve";
  m.state_dim_ = 2;
  m.labels_ = {"y_V [m]", "y_V_dot [m/s]"};
  m.params_ = p;
  m.rhs_ = [p](const Eigen::VectorXd& x, double u, double) -> Eigen::VectorXd {
    return valve_dynamics(Eigen::Vector2d(x(0), x(1)), u, p);
  };
  return m;
}

const GolfParams& PlantModel::golf_params() const {
  if (auto* p = std::get_if<GolfParams>(&params_)) return *p;
  throw ConfigError("plant '" + name_ + "' is not a golf plant");
}

const ValveParams& PlantModel::valve_params() const {
  if (auto* p = std::get_if<ValveParams>(&params_)) return *p;
  throw ConfigError("plant '" + name_ + "' is not a valve plant");
}

Eigen::VectorXd PlantModel::rhs(const Eigen::VectorXd& x, double u, double t) const {
  if (x.size() != state_dim_) throw ShapeError("plant rhs: state has wrong dimension");
  return rhs_(x, u, t);
}

Eigen::VectorXd PlantModel::project(const Eigen::VectorXd& x) const {
  if (auto* p = std::get_if<ValveParams>(&params_); p && uses_inside_limits(*p))
    return valve_project(Eigen::Vector2d(x(0), x(1)), *p);
  return x;
}

Eigen::VectorXd PlantModel::output(const Eigen::VectorXd& x) const {
  if (auto* p = std::get_if<ValveParams>(&params_);
      p && p->limits && p->placement == LimitPlacement::OutputSaturation) {
    Eigen::VectorXd y(2);
    y(0) = std::clamp(x(0), -p->y_max, p->y_max);
    y(1) = std::clamp(x(1), -p->limits->v_max, p->limits->v_max);
    return y;
  }
  return x;
}

void Trajectory::validate() const {
  if (u.size() != t.size() || x.rows() != t.size()) throw ShapeError("trajectory: length mismatch");
  if (!(dt > 0)) throw ShapeError("trajectory: dt must be positive");
  for (Eigen::Index k = 1; k < t.size(); ++k) {
    const double step = t(k) - t(k - 1);
    if (std::abs(step - dt) > 1e-12 * std::max(1.0, std::abs(t(k))) + 1e-12 * dt)
      throw ShapeError("trajectory: non-uniform time grid at sample " + std::to_string(k));
  }
}

namespace {

Eigen::VectorXd step_once(const PlantModel& model, const Eigen::VectorXd& x, double u, double t, double h,
                          Scheme scheme) {
  if (scheme == Scheme::Euler) return x + h * model.rhs(x, u, t);
  const Eigen::VectorXd k1 = model.rhs(x, u, t);
  const Eigen::VectorXd k2 = model.rhs(x + 0.5 * h * k1, u, t + 0.5 * h);
  const Eigen::VectorXd k3 = model.rhs(x + 0.5 * h * k2, u, t + 0.5 * h);
  const Eigen::VectorXd k4 = model.rhs(x + h * k3, u, t + h);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <typename InputAt>
Trajectory integrate_impl(const PlantModel& model, const Eigen::VectorXd& x0, InputAt input_at, double dt,
                          int n_steps, const IntegratorOptions& opts) {
  if (!(dt > 0)) throw ConfigError("integrate: dt must be positive");
  if (n_steps < 0) throw ConfigError("integrate: n_steps must be >= 0");
  if (opts.substeps < 1) throw ConfigError("integrate: substeps must be >= 1");
  if (x0.size() != model.state_dim()) throw ShapeError("integrate: x0 has wrong dimension");

  Trajectory traj;
  traj.dt = dt;
  traj.t.resize(n_steps + 1);
  traj.u.resize(n_steps + 1);
  traj.x.resize(n_steps + 1, model.state_dim());

  Eigen::VectorXd x = model.project(x0);
  const double h = dt / opts.substeps;
  for (int k = 0; k <= n_steps; ++k) {
    const double t = k * dt;
    traj.t(k) = t;
    traj.u(k) = input_at(k, t);
    traj.x.row(k) = model.output(x).transpose();
    if (k == n_steps) break;
    for (int s = 0; s < opts.substeps; ++s) {
      x = model.project(step_once(model, x, traj.u(k), t + s * h, h, opts.scheme));
    }
    if (!x.allFinite()) throw DivergenceError("integrate: non-finite state", k + 1);
  }
  return traj;
}

}  // namespace

Trajectory integrate(const PlantModel& model, const Eigen::VectorXd& x0, const InputSignal& u_of_t, double dt,
                     int n_steps, const IntegratorOptions& opts) {
  return integrate_impl(model, x0, [&](int, double t) { return u_of_t(t); }, dt, n_steps, opts);
}

Trajectory integrate(const PlantModel& model, const Eigen::VectorXd& x0, std::span<const double> u_samples,
                     double dt, int n_steps, const IntegratorOptions& opts) {
  if (static_cast<int>(u_samples.size()) < n_steps)
    throw ShapeError("integrate: need at least n_steps input samples");
  return integrate_impl(
      model, x0,
      [&](int k, double) {
        const auto idx = std::min<std::size_t>(static_cast<std::size_t>(k), u_samples.size() - 1);
        return u_samples.empty() ? 0.0 : u_samples[idx];
      },
      dt, n_steps, opts);
}

namespace {

double& golf_field(GolfParams& p, const std::string& name) {
  if (name == "m") return p.m;
  if (name == "a") return p.a;
  if (name == "J") return p.J;
  if (name == "d") return p.d;
  if (name == "r") return p.r;
  if (name == "mu") return p.mu;
  if (name == "g") return p.g;
  if (name == "sign_eps") return p.sign_eps;
  throw ConfigError("golf prior: unknown parameter '" + name + "'");
}

double& valve_field(ValveParams& p, const std::string& name) {
  if (name == "f_V") return p.f_V;
  if (name == "D_V") return p.D_V;
  if (name == "K_V") return p.K_V;
  if (name == "y_max") return p.y_max;
  if (name == "p_S") return p.p_S;
  if (name == "v_max" || name == "a_max") {
    if (!p.limits) throw ConfigError("valve prior: '" + name + "' requires limits on the base plant");
    return name == "v_max" ? p.limits->v_max : p.limits->a_max;
  }
  throw ConfigError("valve prior: unknown parameter '" + name + "'");
}

template <typename Params, typename Field>
void apply_overrides(Params& p, const DegradationSpec& spec, Field field) {
  for (const auto& [name, value] : spec.set) field(p, name) = value;
  for (const auto& [name, factor] : spec.scale) field(p, name) *= factor;
}

}  // namespace

PlantModel make_prior(const PlantModel& truth, const DegradationSpec& spec) {
  switch (truth.id()) {
    case PlantId::Golf: {
      GolfParams p = truth.golf_params();
      for (const auto& term : spec.drop) {
        if (term == "friction" || term == "coulomb") p.mu = 0.0;
        else if (term == "damping") p.d = 0.0;
        else throw ConfigError("golf prior: unknown term '" + term + "'");
      }
      apply_overrides(p, spec, golf_field);
      return PlantModel::golf(p);
    }
    case PlantId::Valve: {
      ValveParams p = truth.valve_params();
      for (const auto& term : spec.drop) {
        if (term == "limits") p.limits.reset();
        else throw ConfigError("valve prior: unknown term '" + term + "'");
      }
      apply_overrides(p, spec, valve_field);
      return PlantModel::valve(p);
    }
    case PlantId::Custom: break;
  }
  throw ConfigError("make_prior: unsupported plant '" + truth.name() + "'");
}

PlantModel make_prior(std::string_view plant_id, const DegradationSpec& spec) {
  switch (plant_id_from_string(plant_id)) {
    case PlantId::Golf: return make_prior(PlantModel::golf(GolfParams{}), spec);
    case PlantId::Valve: {
      ValveParams p;
      p.limits = ValveParams::default_limits(p.y_max, p.f_V);
      return make_prior(PlantModel::valve(p), spec);
    }
    default: break;
  }
  throw ConfigError("make_prior: unknown plant id");
}

void to_json(nlohmann::json& j, const GolfParams& p) {
  j = {{"m", p.m}, {"a", p.a}, {"J", p.J}, {"d", p.d}, {"r", p.r}, {"mu", p.mu}, {"g", p.g},
       {"sign_mode", p.sign_mode == SignMode::Hard ? "hard" : "smooth"}, {"sign_eps", p.sign_eps}};
}

void from_json(const nlohmann::json& j, GolfParams& p) {
  require_keys_subset(j, {"m", "a", "J", "d", "r", "mu", "g", "sign_mode", "sign_eps"}, "golf params");
  read_optional(j, "m", p.m, "golf");
  read_optional(j, "a", p.a, "golf");
  read_optional(j, "J", p.J, "golf");
  read_optional(j, "d", p.d, "golf");
  read_optional(j, "r", p.r, "golf");
  read_optional(j, "mu", p.mu, "golf");
  read_optional(j, "g", p.g, "golf");
  read_optional(j, "sign_eps", p.sign_eps, "golf");
  std::string mode = p.sign_mode == SignMode::Hard ? "hard" : "smooth";
  read_optional(j, "sign_mode", mode, "golf");
  if (mode == "hard") p.sign_mode = SignMode::Hard;
  else if (mode == "smooth") p.sign_mode = SignMode::Smooth;
  else throw ConfigError("golf params: sign_mode must be 'hard' or 'smooth'");
  p.validate();
}

void to_json(nlohmann::json& j, const ValveParams& p) {
  j = {{"f_V", p.f_V}, {"D_V", p.D_V}, {"K_V", p.K_V}, {"u_range", {p.u_min, p.u_max}},
       {"y_max", p.y_max}, {"p_S", p.p_S},
       {"placement", p.placement == LimitPlacement::InsideOde ? "ode" : "output"}};
  if (p.limits) j["limits"] = {{"v_max", p.limits->v_max}, {"a_max", p.limits->a_max}};
  else j["limits"] = nullptr;
}

void from_json(const nlohmann::json& j, ValveParams& p) {
  require_keys_subset(j, {"f_V", "D_V", "K_V", "u_range", "y_max", "p_S", "limits", "placement"},
                      "valve params");
  read_optional(j, "f_V", p.f_V, "valve");
  read_optional(j, "D_V", p.D_V, "valve");
  read_optional(j, "K_V", p.K_V, "valve");
  read_optional(j, "y_max", p.y_max, "valve");
  read_optional(j, "p_S", p.p_S, "valve");
  if (j.contains("u_range")) {
    auto r = read_required<std::vector<double>>(j, "u_range", "valve");
    if (r.size() != 2) throw ConfigError("valve params: u_range needs two values");
    p.u_min = r[0];
    p.u_max = r[1];
  }
  if (j.contains("limits")) {
    const auto& l = j.at("limits");
    if (l.is_null() || (l.is_string() && l.get<std::string>() == "none")) {
      p.limits.reset();
    } else if (l.is_string() && l.get<std::string>() == "default") {
      p.limits = ValveParams::default_limits(p.y_max, p.f_V);
    } else {
      require_keys_subset(l, {"v_max", "a_max"}, "valve limits");
      p.limits = ValveLimits{read_required<double>(l, "v_max", "valve limits"),
                             read_required<double>(l, "a_max", "valve limits")};
    }
  }
  std::string placement = p.placement == LimitPlacement::InsideOde ? "ode" : "output";
  read_optional(j, "placement", placement, "valve");
  if (placement == "ode") p.placement = LimitPlacement::InsideOde;
  else if (placement == "output") p.placement = LimitPlacement::OutputSaturation;
  else throw ConfigError("valve params: placement must be 'ode' or 'output'");
  p.validate();
}

void to_json(nlohmann::json& j, const DegradationSpec& s) {
  j = {{"set", s.set}, {"scale", s.scale}, {"drop", s.drop}};
}

void from_json(const nlohmann::json& j, DegradationSpec& s) {
  require_keys_subset(j, {"set", "scale", "drop"}, "degradation spec");
  read_optional(j, "set", s.set, "degradation");
  read_optional(j, "scale", s.scale, "degradation");
  read_optional(j, "drop", s.drop, "degradation");
}

nlohmann::json plant_to_json(const PlantModel& model) {
  switch (model.id()) {
    case PlantId::Golf: return {{"plant", "golf"}, {"params", model.golf_params()}};
    case PlantId::Valve: return {{"plant", "valve"}, {"params", model.valve_params()}};
    case PlantId::Custom: break;
  }
  throw ConfigError("custom plants cannot be serialized");
}

PlantModel plant_from_json(const nlohmann::json& j) {
  require_keys_subset(j, {"plant", "params"}, "plant");
  const auto id = plant_id_from_string(read_required<std::string>(j, "plant", "plant"));
  const nlohmann::json params = j.value("params", nlohmann::json::object());
  if (id == PlantId::Golf) return PlantModel::golf(params.get<GolfParams>());
  return PlantModel::valve(params.get<ValveParams>());
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = "t,u";
  for (Eigen::Index c = 0; c < traj.x.cols(); ++c) out += ",x" + std::to_string(c + 1);
  out += '\n';
  for (Eigen::Index k = 0; k < traj.size(); ++k) {
    out += format_double(traj.t(k));
    out += ',';
    out += format_double(traj.u(k));
    for (Eigen::Index c = 0; c < traj.x.cols(); ++c) {
      out += ',';
      out += format_double(traj.x(k, c));
    }
    out += '\n';
  }
  return out;
}

Trajectory trajectory_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,u", 0) != 0) throw IoError("trajectory csv: bad header");
  const auto cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != cols) throw IoError("trajectory csv: ragged row");
    rows.push_back(std::move(row));
  }
  Trajectory traj;
  const auto n = static_cast<Eigen::Index>(rows.size());
  traj.t.resize(n);
  traj.u.resize(n);
  traj.x.resize(n, cols - 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    traj.t(k) = rows[k][0];
    traj.u(k) = rows[k][1];
    for (int c = 2; c < cols; ++c) traj.x(k, c - 2) = rows[k][c];
  }
  traj.dt = n > 1 ? traj.t(1) - traj.t(0) : 0.0;
  return traj;
}

}  // namespace pgnnl
