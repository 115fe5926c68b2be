#pragma once

// Hyperparameter search (random or Gaussian-process expected improvement)
// and the lambda_phy Pareto sweep.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pgnnl/pgnn.hpp"
#include "pgnnl/random.hpp"

namespace pgnnl {

enum class ParamKind { Int, LogReal, Real, Categorical };

struct ParamDomain {
  std::string name;
  ParamKind kind = ParamKind::Real;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> choices;  // categorical only

  void validate() const;
  /// Maps t in [0, 1] into the domain; integers and categories take equal
  /// sub-intervals.
  nlohmann::json from_unit(double t) const;
  /// Centre of the value's sub-interval for integers and categories.
  double to_unit(const nlohmann::json& v) const;
  bool contains(const nlohmann::json& v) const;
};

/// A sampled configuration is a JSON object {name: value}.
struct SearchSpace {
  std::vector<ParamDomain> params;

  std::size_t dim() const { return params.size(); }
  void validate() const;
  nlohmann::json from_unit(const Eigen::VectorXd& t) const;
  Eigen::VectorXd to_unit(const nlohmann::json& config) const;
  bool contains(const nlohmann::json& config) const;
  nlohmann::json sample(Rng& rng) const;

  /// width 2-128, layers 1-3, learning_rate 1e-4-1e-2 (log),
  /// lambda_phy 0.01-0.99, activation {tanh, relu}.
  static SearchSpace pgnn_default();
};

void to_json(nlohmann::json& j, const SearchSpace& s);
void from_json(const nlohmann::json& j, SearchSpace& s);

enum class SearchStrategy { Random, Surrogate };
std::string to_string(SearchStrategy s);
SearchStrategy search_strategy_from_string(const std::string& s);

struct TrialOutcome {
  double objective = 0.0;
  double L_error = 0.0;
  double L_phy = 0.0;
};

/// Evaluates one configuration with the given trial seed. Exceptions and
/// non-finite objectives mark the trial failed.
using Objective = std::function<TrialOutcome(const nlohmann::json& config, std::uint64_t seed)>;

struct TrialRecord {
  int index = 0;
  nlohmann::json config;
  double objective = 0.0;
  double L_error = 0.0;
  double L_phy = 0.0;
  std::uint64_t seed = 0;
  double wall_time = 0.0;  // s
  bool failed = false;
  std::string error;
};

/// One JSON object; wall time only when asked for, since it varies run to run.
nlohmann::json trial_to_json(const TrialRecord& r, bool include_wall_time = false);
std::string trials_to_jsonl(const std::vector<TrialRecord>& records, bool include_wall_time = false);

class SearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SearchOptions {
  int budget = 20;
  SearchStrategy strategy = SearchStrategy::Surrogate;
  std::uint64_t seed = 0;
  /// Random trials before the surrogate takes over.
  int initial_random = 5;
  int candidates = 512;
  double length_scale = 0.2;
  double noise = 1e-6;
};

struct SearchResult {
  TrialRecord best;
  std::vector<TrialRecord> records;
};

/// Trial i runs with seed opts.seed + i. Throws SearchError when every
/// trial failed.
SearchResult search(const SearchSpace& space, const Objective& objective, const SearchOptions& opts);

/// Zero-mean GP with squared-exponential kernel on standardized targets.
class GaussianProcess {
 public:
  GaussianProcess(double length_scale, double noise);
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);  // rows are points
  /// Mean and standard deviation in the units of y.
  std::pair<double, double> predict(const Eigen::VectorXd& x) const;

 private:
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  double ell_, noise_;
  Eigen::MatrixXd X_;
  Eigen::VectorXd alpha_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double y_mean_ = 0.0, y_std_ = 1.0;
};

/// Expected improvement below `best` for a Gaussian prediction.
double expected_improvement(double mean, double sd, double best);

/// Applies width / layers / learning_rate / lambda_phy / activation keys.
void apply_search_config(const nlohmann::json& config, PgnnConfig& cfg);

/// Trains a PGNN-L with the overrides and scores it by validation rollout
/// RMSE; L_error / L_phy are the final validation loss components.
Objective pgnn_objective(const PgnnConfig& base, const Dataset& data);

struct ParetoPoint {
  double lambda_phy = 0.0;
  double L_error = 0.0;
  double L_phy = 0.0;
  bool nondominated = false;
  bool failed = false;
  std::string error;
};

/// Flags points no other point weakly dominates with one strict inequality.
/// Failed points are never flagged and never dominate.
void flag_nondominated(std::vector<ParetoPoint>& points);

/// Removes duplicate lambdas (first occurrence kept, warns); values must
/// lie in [0, 1].
std::vector<double> dedupe_lambda_grid(const std::vector<double>& grid);

/// Trains one PGNN-L per lambda with the same seeds and architecture and
/// reports the validation loss components of the best epoch.
std::vector<ParetoPoint> pareto_sweep(const std::vector<double>& grid, const PgnnConfig& fixed, const Dataset& data);

/// CSV `lambda_phy,L_error,L_phy,nondominated`; failed points carry nan.
std::string pareto_to_csv(const std::vector<ParetoPoint>& points);

}  // namespace pgnnl
