#pragma once

// Continuous-time plant models (golf robot swing arm, servo valve slider) and
// fixed-step integration. Dynamics are templated on the scalar so the energy
// models can differentiate through them with Eigen's AutoDiffScalar.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace pgnnl {

enum class SignMode { Hard, Smooth };
enum class LimitPlacement { InsideOde, OutputSaturation };
enum class Scheme { Rk4, Euler };

/// Golf robot club arm. Defaults are the identified rig parameters.
struct GolfParams {
  double m = 0.5241;    // kg
  double a = 0.4702;    // m, CoG to rotation axis
  double J = 0.1445;    // kg m^2
  double d = 0.0132;    // viscous damping
  double r = 0.0245;    // m, friction point to axis
  double mu = 1.5136;   // friction coefficient
  double g = 9.81;      // m/s^2
  SignMode sign_mode = SignMode::Hard;
  double sign_eps = 1e-4;  // rad/s, width of the tanh surrogate

  void validate() const;
};

struct ValveLimits {
  double v_max;  // m/s
  double a_max;  // m/s^2
};

/// Servo valve slider as a second-order lag.
struct ValveParams {
  double f_V = 350.0;         // Hz
  double D_V = 0.5;
  double K_V = 0.1;
  double u_min = -10.0;       // V
  double u_max = 10.0;        // V
  double y_max = 4.2672e-4;   // m
  double p_S = 280e5;         // Pa; not used by the dynamics
  std::optional<ValveLimits> limits;
  LimitPlacement placement = LimitPlacement::InsideOde;

  /// T_V = 1 / (2 pi f_V)
  double time_constant() const { return 1.0 / (2.0 * M_PI * f_V); }
  void validate() const;

  /// Placeholder magnitudes: v_max = 2 y_max (2 pi f_V) 0.05, a_max = y_max (2 pi f_V)^2 0.1.
  static ValveLimits default_limits(double y_max, double f_V);
};

template <typename Scalar>
Scalar signum(const Scalar& v, SignMode mode, double eps) {
  using std::tanh;
  if (mode == SignMode::Smooth) return tanh(v / eps);
  if (v > Scalar(0)) return Scalar(1);
  if (v < Scalar(0)) return Scalar(-1);
  return Scalar(0);
}

/// F_G(x) = d x2 + r mu sign(x2) (m a x2^2 + m g cos x1)
template <typename Scalar>
Scalar golf_friction(const Scalar& x1, const Scalar& x2, const GolfParams& p) {
  using std::cos;
  return p.d * x2 + p.r * p.mu * signum(x2, p.sign_mode, p.sign_eps) *
                        (p.m * p.a * x2 * x2 + p.m * p.g * cos(x1));
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> golf_rhs(const Eigen::Matrix<Scalar, 2, 1>& x, const Scalar& u,
                                     const GolfParams& p) {
  using std::sin;
  Eigen::Matrix<Scalar, 2, 1> dx;
  dx(0) = x(1);
  dx(1) = (-p.m * p.g * p.a * sin(x(0)) - golf_friction(x(0), x(1), p) + 4.0 * u) / p.J;
  return dx;
}

/// Unlimited second-order lag. Limits are applied by valve_dynamics.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> valve_rhs(const Eigen::Matrix<Scalar, 2, 1>& x, const Scalar& u,
                                      const ValveParams& p) {
  const double T = p.time_constant();
  Eigen::Matrix<Scalar, 2, 1> dx;
  dx(0) = x(1);
  dx(1) = -(2.0 * p.D_V / T) * x(1) - x(0) / (T * T) + (p.K_V / (T * T)) * u;
  return dx;
}

/// Checked evaluation; throws DomainError on non-finite input.
Eigen::Vector2d golf_dynamics(const Eigen::Vector2d& x, double u, const GolfParams& p);

/// Checked evaluation. With limits configured (InsideOde placement) the
/// state is clamped to |x1| <= y_max, |x2| <= v_max before evaluation, the
/// velocity is zeroed when pushing into a position stop, and the
/// acceleration is clamped to a_max.
Eigen::Vector2d valve_dynamics(const Eigen::Vector2d& x, double u, const ValveParams& p);

/// Projects a valve state onto the admissible set (no-op without limits).
Eigen::Vector2d valve_project(const Eigen::Vector2d& x, const ValveParams& p);

enum class PlantId { Golf, Valve, Custom };

std::string to_string(PlantId id);
PlantId plant_id_from_string(std::string_view name);

using StateRhs = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, double u, double t)>;

class PlantModel {
 public:
  using Params = std::variant<std::monostate, GolfParams, ValveParams>;

  /// Arbitrary ODE, used for tests and ablations.
  PlantModel(std::string name, int state_dim, StateRhs rhs, std::vector<std::string> labels = {});

  static PlantModel golf(const GolfParams& p);
  static PlantModel valve(const ValveParams& p);

  PlantId id() const { return id_; }
  const std::string& name() const { return name_; }
  int state_dim() const { return state_dim_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const Params& params() const { return params_; }
  const GolfParams& golf_params() const;
  const ValveParams& valve_params() const;

  Eigen::VectorXd rhs(const Eigen::VectorXd& x, double u, double t = 0.0) const;
  /// State projection applied after every integration step.
  Eigen::VectorXd project(const Eigen::VectorXd& x) const;
  /// Output map; identity except for output-saturated valves.
  Eigen::VectorXd output(const Eigen::VectorXd& x) const;

 private:
  PlantModel() = default;

  PlantId id_ = PlantId::Custom;
  std::string name_;
  int state_dim_ = 0;
  std::vector<std::string> labels_;
  Params params_;
  StateRhs rhs_;
};

/// Uniformly sampled trajectory; row k of x is the state at t(k).
struct Trajectory {
  double dt = 0.0;
  Eigen::VectorXd t;
  Eigen::VectorXd u;
  Eigen::MatrixXd x;

  Eigen::Index size() const { return t.size(); }
  void validate() const;
};

struct IntegratorOptions {
  Scheme scheme = Scheme::Rk4;
  int substeps = 1;  // internal steps per sample, input held constant across them
};

using InputSignal = std::function<double(double t)>;

/// Zero-order-hold integration: u is sampled at the start of each step.
/// Returns n_steps + 1 samples. Throws DivergenceError naming the step.
Trajectory integrate(const PlantModel& model, const Eigen::VectorXd& x0, const InputSignal& u_of_t,
                     double dt, int n_steps, const IntegratorOptions& opts = {});

/// Same, driven by sampled inputs; u_samples[k] is held over [t_k, t_k+1).
/// Needs at least n_steps samples.
Trajectory integrate(const PlantModel& model, const Eigen::VectorXd& x0,
                     std::span<const double> u_samples, double dt, int n_steps,
                     const IntegratorOptions& opts = {});

/// Parameter overrides and dropped terms that turn a true plant into a prior.
struct DegradationSpec {
  std::map<std::string, double> set;
  std::map<std::string, double> scale;
  std::vector<std::string> drop;

  bool empty() const { return set.empty() && scale.empty() && drop.empty(); }
};

PlantModel make_prior(const PlantModel& truth, const DegradationSpec& spec);
/// Prior derived from the default (table) parameters of the named plant.
PlantModel make_prior(std::string_view plant_id, const DegradationSpec& spec);

void to_json(nlohmann::json& j, const GolfParams& p);
void from_json(const nlohmann::json& j, GolfParams& p);
void to_json(nlohmann::json& j, const ValveParams& p);
void from_json(const nlohmann::json& j, ValveParams& p);
void to_json(nlohmann::json& j, const DegradationSpec& s);
void from_json(const nlohmann::json& j, DegradationSpec& s);

/// {"plant": "golf"|"valve", "params": {...}}
nlohmann::json plant_to_json(const PlantModel& model);
PlantModel plant_from_json(const nlohmann::json& j);

/// CSV with header `t,u,x1,...`, 17 significant digits.
std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(const std::string& text);

}  // namespace pgnnl
