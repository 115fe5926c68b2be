#pragma once

// Synthetic benchmarks comparing the prior model, a plain network, SINDYc
// and PGNN-L on one held-out evaluation trajectory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pgnnl/datakit.hpp"
#include "pgnnl/pgnn.hpp"
#include "pgnnl/physloss.hpp"
#include "pgnnl/plants.hpp"
#include "pgnnl/sindy.hpp"

namespace pgnnl {

/// sqrt(mean squared error) of channel 0, or of all channels with `all_channels`.
double rmse(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference, bool all_channels = false);

struct PriorVariant {
  std::string name;
  DegradationSpec degradation;
};

struct NetworkSettings {
  std::vector<int> hidden = {16, 16};
  Activation activation = Activation::Tanh;
  bool residual = true;
  bool prior_anchor = false;  // PGNN-L only
  double lambda_phy = 0.5;
  std::optional<double> output_bound;
  int epochs = 300;
  int batch_size = 256;
  double learning_rate = 1e-3;
  int patience = 50;
  /// Independent initializations per learned network; the one with the
  /// lowest validation rollout RMSE is kept.
  int restarts = 4;
};

struct SindySettings {
  std::vector<std::string> library;  // empty = plant default
  std::vector<double> lambda_grid = default_lambda_grid();
  SindySolver solver = SindySolver::Stlsq;
  bool normalize_columns = false;
  /// Centred moving average over this many samples applied to the
  /// measurements before regression; 1 disables it.
  int smoothing_window = 11;
};

struct EvaluationSpec {
  Excitation excitation;
  double duration = 4.0;
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
};

struct ExperimentConfig {
  PlantId plant = PlantId::Golf;
  GolfParams golf;
  ValveParams valve;
  std::vector<PriorVariant> priors;
  std::vector<Excitation> excitations;
  double duration = 4.0;  // s per training trajectory
  double dt = 1e-3;
  /// Absolute per-channel noise std; when `noise_relative` is set the std
  /// of channel c is noise_relative * max |clean y_c| over the suite.
  std::vector<double> noise_std;
  std::optional<double> noise_relative;
  SplitMode split_mode = SplitMode::Contiguous;
  IntegratorOptions integrator;
  NetworkSettings network;
  SindySettings sindy;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  EvaluationSpec evaluation;
  double transient_fraction = 0.15;

  PlantModel true_plant() const;
  PlantModel prior_plant(const PriorVariant& v) const;
  int steps(double seconds) const;
  void validate() const;

  /// Golf: six excitations (2 sine, 2 step, 2 chirp) of 4 s at 1 kHz,
  /// friction parameters halved in the prior, evaluation on a chirp.
  static ExperimentConfig golf_default();
  /// Valve with limits: ten step trajectories at 2 kHz, prior A without
  /// limits, prior B with misestimated limits, evaluation on a 5 V step at 1 s.
  static ExperimentConfig valve_default();
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c);

struct PhysicsStats {
  int steps = 0;
  double mean_abs = 0.0;
  double max_abs = 0.0;
  double p50 = 0.0, p90 = 0.0, p99 = 0.0;
};

/// Per-step energy residuals of a rollout (row k = state at t_k, u[k] held
/// over t_k -> t_{k+1}); percentiles by nearest rank.
PhysicsStats physics_consistency_report(const Eigen::MatrixXd& rollout, std::span<const double> u,
                                        const EnergyModel& energy, double dt);

struct MethodResult {
  std::string method;
  bool failed = false;
  std::string error;
  double rmse = 0.0;      // channel 1
  double rmse_all = 0.0;  // all channels
  /// The rollout left the finite range; rmse and rmse_all are +inf.
  bool diverged = false;
  int diverged_step = 0;
  /// Energy residuals under the prior's energy model (the physics knowledge
  /// given to the loss) and under the true plant's.
  PhysicsStats physics, physics_true;
  int neurons = 0;
  double lambda_phy = 0.0;
  double validation_rmse = 0.0;  // of the selected restart / lambda
  double sindy_lambda = 0.0;
  int sindy_nonzeros = 0;
  double max_abs_x1 = 0.0, max_abs_x2 = 0.0;
  Eigen::MatrixXd rollout;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MethodResult> methods;
  const MethodResult* find(const std::string& method) const;
};

struct Report {
  std::string plant;
  std::string config_hash;
  nlohmann::json config;
  std::string data_note;  // e.g. the reduced-data fraction
  Eigen::VectorXd t, u;
  Eigen::MatrixXd reference;  // noise-free true-plant evaluation trajectory
  PhysicsStats reference_physics;  // true plant energy model
  std::vector<SeedResult> seeds;
};

/// The configured library, or the plant's default one.
LibrarySpec sindy_library(const ExperimentConfig& cfg);
/// PGNN-L settings of the experiment on the given prior; restarts and
/// seeds are left to the caller.
PgnnConfig network_config(const ExperimentConfig& cfg, const PlantModel& prior, const DegradationSpec& deg);

/// Method names: "prior", "nn", "sindyc", "pgnn-l"; with several prior
/// variants the prior-based ones get a "-<variant>" suffix.
std::vector<std::string> method_names(const ExperimentConfig& cfg);

/// Training data of one seed: noisy measurements of the suite, split 60-20-20.
Dataset benchmark_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs the listed methods (all when empty) for every seed. `fraction` < 1
/// trains on the leading fraction of every trajectory, re-split 60-20-20.
Report run_benchmark(const ExperimentConfig& cfg, const std::vector<std::string>& methods = {}, double fraction = 1.0);

Report run_golf_benchmark(const ExperimentConfig& cfg);
Report run_valve_benchmark(const ExperimentConfig& cfg);

struct ReducedDataStudy {
  double fraction = 0.15;
  Report full, reduced;
};

/// SINDYc and PGNN-L on full data and on the leading `fraction` of every
/// trajectory.
ReducedDataStudy run_reduced_data_study(const ExperimentConfig& cfg, double fraction);

nlohmann::json report_to_json(const Report& r);
std::string report_to_markdown(const Report& r);
/// `t,u,y1_ref,y2_ref,y1,y2`
std::string rollout_to_csv(const Report& r, const MethodResult& m);
/// report.json, report.md and rollout_<method>_seed<k>.csv
void write_report(const std::filesystem::path& dir, const Report& r);

}  // namespace pgnnl
