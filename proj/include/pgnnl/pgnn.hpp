#pragma once

// Physics-guided network: the prior model's open-loop simulation is appended
// to the network input, training uses teacher forcing with the composed loss,
// prediction feeds the network's own output back.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pgnnl/datakit.hpp"
#include "pgnnl/nnet.hpp"
#include "pgnnl/physloss.hpp"
#include "pgnnl/plants.hpp"

namespace pgnnl {

/// Which blocks feed the network, always in the order u, x_phy, y_prev.
/// The u block of the row predicting y_k is the input held over the step
/// t_{k-1} -> t_k, i.e. dataset sample u_{k-1}.
struct InputLayout {
  bool u = true;
  bool x_phy = true;
  bool y_prev = true;

  Eigen::Index width(Eigen::Index input_dim, Eigen::Index state_dim) const;
  static InputLayout full() { return {}; }
  static InputLayout baseline() { return {true, false, true}; }
  bool operator==(const InputLayout&) const = default;
};

/// "u,x_phy,y_prev" style list.
std::string to_string(const InputLayout& layout);
InputLayout input_layout_from_string(const std::string& s);

struct PgnnConfig {
  /// Required when the layout has the x_phy block or the energy term is on.
  std::optional<PlantModel> prior;
  DegradationSpec prior_spec;  // recorded with the model
  IntegratorOptions prior_integrator;
  /// Sampling interval the model is built for; 0 adopts the dataset's.
  double dt = 0.0;

  std::vector<int> hidden = {16, 16};
  Activation activation = Activation::Tanh;
  InputLayout layout;
  /// Output parameterization y_hat_k = y_hat_{k-1} + delta, the network
  /// producing delta in units of the train-split increment statistics.
  /// Needs the y_prev block.
  bool residual = true;
  /// With `residual`, add the increment to the prior's state x_phy_k
  /// instead of y_hat_{k-1}. Needs a prior.
  bool prior_anchor = false;

  double lambda_phy = 0.5;
  /// Energy model of the physics term; defaults to the prior's.
  std::optional<EnergyModel> energy;
  /// Optional |y_1| <= bound penalty added to the physics term.
  std::optional<double> output_bound;

  TrainOptions train;
  std::uint64_t init_seed = 0;

  void validate() const;
};

/// Standardized training table plus what the loss needs to pair rows.
struct TrainingTable {
  Eigen::MatrixXd inputs;   // rows x layout width, standardized
  Eigen::MatrixXd targets;  // rows x l, standardized y_k
  Eigen::MatrixXd z_prev;   // rows x l, standardized measured y_{k-1}
  Eigen::MatrixXd z_base;   // rows x l, what the residual output adds to (z_prev or standardized x_phy_k)
  std::vector<Eigen::Index> record;  // dataset index k of each row's target
  std::vector<Eigen::Index> prev_row;  // row predicting y_{k-1} in the same trajectory, or -1
  Eigen::VectorXd u_prev;   // physical u_{k-1} per row (first input channel)
  Eigen::MatrixXd u_rows;   // physical u_{k-1} per row, all channels
  Eigen::MatrixXd x_phy;    // physical prior states per dataset record (empty without prior)
  std::vector<Eigen::Index> train_rows, val_rows, test_rows;
  Standardizer u_scale, x_phy_scale, y_scale;
  Standardizer delta_scale;  // of z_k - z_base
};

/// Builds the table; standardizers are fit on train-split rows only. Throws
/// ConfigError when dt differs from the prior simulation requirements or the
/// dataset has no train / validation rows.
TrainingTable build_training_table(const PgnnConfig& cfg, const Dataset& data);

/// Open-loop prior simulation per trajectory from the measured initial state.
Eigen::MatrixXd simulate_prior_blocks(const PlantModel& prior, const Dataset& data, const IntegratorOptions& opts);

struct PgnnModel {
  std::string method = "pgnn-l";  // or "nn"
  Mlp net;
  InputLayout layout;
  bool residual = false;
  bool prior_anchor = false;
  Standardizer u_scale, x_phy_scale, y_scale, delta_scale;
  std::optional<PlantModel> prior;
  DegradationSpec prior_spec;
  IntegratorOptions prior_integrator;
  double lambda_phy = 0.0;
  double dt = 0.0;
};

struct PgnnTrainResult {
  PgnnModel model;
  TrainHistory history;  // components L_error, L_phy
};

/// Standardized prediction for a batch of network outputs.
Eigen::MatrixXd compose_output(bool residual, const Standardizer& delta_scale, const Eigen::MatrixXd& net_out,
                               const Eigen::MatrixXd& z_prev);

/// The composed loss over table rows; pairs are consecutive rows of one
/// trajectory that land in the same batch.
LossSpec pgnn_loss(const PgnnConfig& cfg, const TrainingTable& table, double dt);

PgnnTrainResult train_pgnn(const PgnnConfig& cfg, const Dataset& data);
PgnnTrainResult train_pgnn(const PgnnConfig& cfg, const Dataset& data, const TrainingTable& table);

/// Plain network: layout {u, y_prev}, lambda forced to 0 (warns if the
/// config had a nonzero lambda or another layout).
PgnnTrainResult train_baseline_nn(PgnnConfig cfg, const Dataset& data);

/// Closed-loop prediction. u[k] is held over t_k -> t_{k+1}; needs at least
/// n_steps samples. Returns n_steps + 1 rows with row 0 = x0. Throws
/// DivergenceError with the step index on a non-finite prediction.
Eigen::MatrixXd predict_rollout(const PgnnModel& model, std::span<const double> u, const Eigen::VectorXd& x0,
                                int n_steps);

/// Channel-1 closed-loop RMSE over the validation window of every
/// trajectory, each rollout started from its measured first validation
/// state. A diverging rollout scores +infinity.
double pgnn_validation_rmse(const PgnnModel& model, const Dataset& data);

/// Writes the network checkpoint at `path` and the sidecar next to it.
void save_pgnn(const PgnnModel& model, const std::filesystem::path& path, const nlohmann::json& metadata = {});
PgnnModel load_pgnn(const std::filesystem::path& path);
std::filesystem::path pgnn_sidecar_path(const std::filesystem::path& checkpoint);

nlohmann::json pgnn_sidecar(const PgnnModel& model);
PgnnModel pgnn_from_json(const nlohmann::json& checkpoint, const nlohmann::json& sidecar);

}  // namespace pgnnl
