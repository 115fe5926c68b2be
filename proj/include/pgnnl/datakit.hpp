#pragma once

// Measurement data: excitation signals, synthetic measurements, 60-20-20
// splits, standardization and snapshot matrices.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pgnnl/plants.hpp"

namespace pgnnl {

enum class ExcitationKind { Step, Sine, Chirp };

/// Input signal shape. Every kind is zero before `start`.
struct Excitation {
  ExcitationKind kind = ExcitationKind::Step;
  double amplitude = 0.0;
  double frequency = 0.0;   // Hz, sine
  double f0 = 0.0;          // Hz, chirp start
  double f1 = 0.0;          // Hz, chirp end
  double offset = 0.0;
  double start = 0.0;       // s
  double sweep_time = 0.0;  // s, chirp sweep length; 0 = until the end of the signal

  void validate() const;
  static Excitation step(double amplitude, double start, double offset = 0.0);
  static Excitation sine(double amplitude, double frequency, double offset = 0.0, double start = 0.0);
  static Excitation chirp(double amplitude, double f0, double f1, double offset = 0.0, double start = 0.0);
};

/// Samples at t_k = k dt, k = 0..n_steps.
std::vector<double> generate_signal(const Excitation& e, double dt, int n_steps);

enum class Split : std::uint8_t { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Per-channel affine map z = (v - mean) / std.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::Index channels() const { return mean.size(); }
  /// Rows are samples.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& v) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const;
  Eigen::RowVectorXd apply_row(const Eigen::RowVectorXd& v) const;
  Eigen::RowVectorXd invert_row(const Eigen::RowVectorXd& z) const;

  static Standardizer identity(Eigen::Index channels);
  /// Fits on all rows of `v`. Constant channels get std = 1 and a warning.
  static Standardizer fit(const Eigen::MatrixXd& v);
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

/// Time-indexed records (t_k, u_k, y_k), possibly several concatenated
/// trajectories. Column vectors / matrices are indexed by record.
struct Dataset {
  double dt = 0.0;
  Eigen::VectorXd t;
  Eigen::MatrixXd u;  // N x m
  Eigen::MatrixXd y;  // N x l
  std::vector<int> traj_id;
  std::vector<Split> split;

  std::uint64_t seed = 0;
  std::vector<double> noise_std;
  std::optional<Standardizer> input_stats;
  std::optional<Standardizer> output_stats;

  Eigen::Index size() const { return t.size(); }
  Eigen::Index input_dim() const { return u.cols(); }
  Eigen::Index output_dim() const { return y.cols(); }
  bool empty() const { return t.size() == 0; }

  /// Half-open record ranges [begin, end) of each trajectory in order.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> trajectory_ranges() const;
  int trajectory_count() const;
  std::vector<Eigen::Index> indices_of(Split s) const;
  void validate() const;
};

/// Integrates the true plant (full state output) and adds i.i.d. Gaussian
/// noise with per-channel `noise_std`. Inputs stay noise-free.
Dataset simulate_measurement(const PlantModel& true_plant, const Excitation& e, double dt, int n_steps,
                             std::span<const double> noise_std, std::uint64_t seed,
                             const Eigen::VectorXd& x0 = {}, const IntegratorOptions& opts = {});

/// Noise-free dataset from a trajectory.
Dataset dataset_from_trajectory(const Trajectory& traj);

/// Appends trajectories; ids are renumbered consecutively. dt must agree.
Dataset concat(std::span<const Dataset> parts);

enum class SplitMode { Contiguous, ByTrajectory };
SplitMode split_mode_from_string(const std::string& s);

/// Contiguous: first 60 % of every trajectory train, next 20 % val, last 20 %
/// test (val and test get floor(0.2 n), train the remainder). ByTrajectory:
/// whole trajectories, shuffled with `seed`, same rounding rule.
Dataset split_60_20_20(const Dataset& d, SplitMode mode, std::uint64_t seed);

enum class ChannelSet { Inputs, Outputs };

/// Fits on train-tagged records only.
Standardizer fit_standardizer(const Dataset& d, ChannelSet channels);

/// First ceil(fraction * n) records of every trajectory, split tags cleared to train.
Dataset leading_fraction(const Dataset& d, double fraction);

/// Centred moving average of the outputs over `window` (odd) samples within
/// every trajectory; the window shrinks symmetrically at trajectory ends.
Dataset smooth_outputs(const Dataset& d, int window);

/// Records [begin, end) of one trajectory as a new single-trajectory dataset.
Dataset slice(const Dataset& d, Eigen::Index begin, Eigen::Index end);

/// Y (l x P), Y' (l x P) and U (m x P): column j pairs record k with its
/// successor k+1 in the same trajectory.
struct SnapshotMatrices {
  Eigen::MatrixXd Y;
  Eigen::MatrixXd Yp;
  Eigen::MatrixXd U;
  std::vector<Eigen::Index> source;  // record index k of each column

  Eigen::Index cols() const { return Y.cols(); }
};

/// When `only` is set, a pair is kept only if both records carry that tag.
SnapshotMatrices build_snapshots(const Dataset& d, std::optional<Split> only = std::nullopt);

/// CSV `t,u,y1,y2,split,traj_id` for the records of `d`.
std::string dataset_to_csv(const Dataset& d);
Dataset dataset_from_csv(const std::string& text);

nlohmann::json dataset_sidecar(const Dataset& d);

/// Writes one CSV per trajectory (traj_000.csv, ...) plus `dataset.json`.
void write_dataset(const std::filesystem::path& dir, const Dataset& d);
/// Reads a dataset from its sidecar path.
Dataset read_dataset(const std::filesystem::path& sidecar);

void to_json(nlohmann::json& j, const Excitation& e);
void from_json(const nlohmann::json& j, Excitation& e);

}  // namespace pgnnl
