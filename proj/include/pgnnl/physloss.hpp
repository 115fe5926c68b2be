#pragma once

// Energy-balance residual, constraint penalties and the weighted composed loss.
// Residual convention: dE_kin + dE_pot - W_con + W_diss, which is zero along
// trajectories that follow the modeled energy balance.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgnnl/datakit.hpp"
#include "pgnnl/plants.hpp"

namespace pgnnl {

struct EnergyTerms {
  double dE_kin = 0.0;
  double dE_pot = 0.0;
  double W_con = 0.0;   // work supplied by the input over the step
  double W_diss = 0.0;  // work removed by friction / damping over the step

  double residual() const { return dE_kin + dE_pot - W_con + W_diss; }
};

struct ResidualGradient {
  double residual = 0.0;
  Eigen::VectorXd d_prev;  // d residual / d x_prev
  Eigen::VectorXd d_curr;  // d residual / d x_curr
};

/// Per-plant energy bookkeeping. Work terms use trapezoidal quadrature over
/// one step with the input held at u_prev.
class EnergyModel {
 public:
  struct Impl;

  static EnergyModel golf(const GolfParams& p);
  /// Limits, if any, are ignored: the balance covers the linear lag only.
  static EnergyModel valve(const ValveParams& p);
  /// Throws ConfigError for plants without an energy model.
  static EnergyModel for_plant(const PlantModel& plant);

  const std::string& tag() const;
  int state_dim() const { return 2; }

  double kinetic(const Eigen::VectorXd& x) const;
  double potential(const Eigen::VectorXd& x) const;
  double control_work(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr, double u_prev) const;
  double dissipation_work(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr, double dt) const;

  EnergyTerms terms(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr, double u_prev, double dt) const;
  ResidualGradient residual_gradient(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr, double u_prev,
                                     double dt) const;

 private:
  explicit EnergyModel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

/// Residual of one step, states in physical units. Throws DomainError on
/// non-finite input or result.
double delta_energy(const EnergyModel& em, const Eigen::VectorXd& x_curr, const Eigen::VectorXd& x_prev,
                    double u_prev, double dt);

/// A pair of rows (prev, curr) of a prediction matrix plus the input applied
/// at the earlier row.
struct StepPair {
  Eigen::Index prev;
  Eigen::Index curr;
  double u_prev;
};

struct PhysicsLossResult {
  double value = 0.0;              // mean of squared residuals
  std::vector<EnergyTerms> terms;  // one per pair
  Eigen::MatrixXd gradient;        // d value / d states, same shape as the states
};

/// Mean squared residual over consecutive rows k = 1..N-1 of `states`
/// (physical units), with u(k-1) as the held input. N < 2 or a length
/// mismatch between states and u throws ShapeError.
PhysicsLossResult physics_loss(const EnergyModel& em, const Eigen::MatrixXd& states, const Eigen::VectorXd& u,
                               double dt);

/// Same over explicit pairs; an empty pair list yields value 0.
PhysicsLossResult physics_loss(const EnergyModel& em, const Eigen::MatrixXd& states, std::span<const StepPair> pairs,
                               double dt);

enum class ConstraintKind { Equality, Inequality };

/// h(y, u) on one sample in physical units, with its gradient in y.
struct ConstraintSpec {
  std::string name;
  ConstraintKind kind = ConstraintKind::Inequality;
  std::function<double(const Eigen::RowVectorXd& y, const Eigen::RowVectorXd& u)> h;
  std::function<Eigen::RowVectorXd(const Eigen::RowVectorXd& y, const Eigen::RowVectorXd& u)> dh_dy;
};

/// |y_channel| - bound <= 0
ConstraintSpec bound_constraint(int channel, double bound);
/// y_channel - value = 0
ConstraintSpec equality_constraint(int channel, double value);

struct ConstraintLossResult {
  double value = 0.0;
  Eigen::MatrixXd gradient;
};

/// Equality: mean h^2. Inequality: mean ReLU(h).
ConstraintLossResult constraint_loss(const ConstraintSpec& spec, const Eigen::MatrixXd& y, const Eigen::MatrixXd& u);

struct ComposedLossConfig {
  double lambda_phy = 0.5;
  /// Without an energy model the physics term consists of constraints only.
  std::optional<EnergyModel> energy;
  std::vector<ConstraintSpec> constraints;
  /// Maps standardized predictions back to physical units; empty means identity.
  Standardizer output_scale;

  /// Warns when lambda is an endpoint, throws ConfigError outside [0, 1].
  void validate() const;
};

struct ComposedLossResult {
  double total = 0.0;
  double error_term = 0.0;
  double physics_term = 0.0;  // energy plus constraint penalties
  double energy_term = 0.0;
  double constraint_term = 0.0;
  Eigen::MatrixXd gradient;  // d total / d y_hat (standardized)
  std::vector<EnergyTerms> terms;
};

/// (1 - lambda) mse(y_hat, y) + lambda (energy + constraints), y_hat and y
/// standardized, u physical (N x m), energy pairs given explicitly.
ComposedLossResult composed_loss(const ComposedLossConfig& cfg, const Eigen::MatrixXd& y_hat,
                                 const Eigen::MatrixXd& y, const Eigen::MatrixXd& u,
                                 std::span<const StepPair> pairs, double dt);

/// Sequence form: pairs are consecutive rows with u(k-1), u given as the
/// first input channel.
ComposedLossResult composed_loss(const ComposedLossConfig& cfg, const Eigen::MatrixXd& y_hat,
                                 const Eigen::MatrixXd& y, const Eigen::MatrixXd& u, double dt);

/// CSV `k,dE_kin,dE_pot,W_con,W_diss,residual`, k counting from 1.
std::string energy_terms_to_csv(std::span<const EnergyTerms> terms);

}  // namespace pgnnl
