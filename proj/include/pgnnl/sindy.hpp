#pragma once

// Discrete-time sparse regression y_{k+1} = Xi psi(y_k, u_k) over a library
// of candidate functions.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pgnnl/datakit.hpp"

namespace pgnnl {

/// Candidate terms act on the variable vector v = (y_1..y_l, u_1..u_m).
enum class TermKind { Constant, Linear, Sin, Cos, Sign, Product };

struct LibraryTerm {
  TermKind kind = TermKind::Constant;
  int a = 0;  // variable index
  int b = 0;  // second factor of a product
  bool operator==(const LibraryTerm&) const = default;
};

struct LibrarySpec {
  int state_dim = 0;
  int input_dim = 0;
  std::vector<LibraryTerm> terms;

  int kappa() const { return static_cast<int>(terms.size()); }
  std::vector<std::string> names() const;
  std::string variable_name(int v) const;
  void validate() const;

  /// Parses names like "1", "y1", "u", "sin(y1)", "cos(y1)", "sign(y2)",
  /// "y2^2", "y1*u".
  static LibrarySpec from_names(int state_dim, int input_dim, const std::vector<std::string>& names);
  /// {1, y1, y2, u, sin y1, cos y1, y2^2, sign y2}
  static LibrarySpec golf_default();
  /// {y1, y2, u}
  static LibrarySpec valve_default();
  /// Constant, all variables, and with `products` all pairwise products
  /// including squares; with `trig` sin and cos of every state.
  static LibrarySpec polynomial(int state_dim, int input_dim, bool products, bool trig);

  bool operator==(const LibrarySpec&) const = default;
};

/// One library row psi(y, u).
Eigen::RowVectorXd evaluate_library(const LibrarySpec& spec, const Eigen::VectorXd& y, const Eigen::VectorXd& u);

/// Psi with one row per snapshot column: Y is l x P, U is m x P.
Eigen::MatrixXd build_library(const LibrarySpec& spec, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& U);

enum class SindySolver { Stlsq, Lasso };
std::string to_string(SindySolver s);
SindySolver sindy_solver_from_string(const std::string& s);

struct StlsqOptions {
  int max_iter = 20;
  /// Regress on Psi columns scaled to unit 2-norm; the threshold then
  /// applies to the scaled coefficients.
  bool normalize_columns = false;
};

struct StlsqResult {
  Eigen::MatrixXd xi;  // l x kappa
  int iterations = 0;  // largest over the output rows
  /// Active-set sizes per iteration for every output row.
  std::vector<std::vector<int>> active_history;
};

/// Sequential thresholded least squares. Yp is l x P, Psi is P x kappa.
/// Warns on rank deficiency and on rows whose active set empties.
StlsqResult fit_stlsq(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& Yp, double lambda, const StlsqOptions& opts = {});

struct LassoOptions {
  int max_iter = 10000;
  double tolerance = 1e-12;
  bool normalize_columns = true;
};

/// Coordinate descent on (1/2P)||y - Psi xi||^2 + lambda ||xi||_1 per row.
Eigen::MatrixXd fit_lasso(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& Yp, double lambda, const LassoOptions& opts = {});

struct SindyModel {
  LibrarySpec library;
  Eigen::MatrixXd xi;  // l x kappa, thresholded entries exactly zero
  double lambda = 0.01;
  double dt = 0.0;
  SindySolver solver = SindySolver::Stlsq;
  bool normalize_columns = false;

  void validate() const;
  int nonzeros() const;
};

void to_json(nlohmann::json& j, const SindyModel& m);
void from_json(const nlohmann::json& j, SindyModel& m);

struct SindyFitOptions {
  SindySolver solver = SindySolver::Stlsq;
  StlsqOptions stlsq;
  LassoOptions lasso;
};

/// Fits on the snapshot pairs whose two records are train-tagged.
SindyModel fit_sindy(const Dataset& data, const LibrarySpec& library, double lambda, const SindyFitOptions& opts = {});

/// y_{k+1} = Xi psi(y_k, u_k) for k = 0..n_steps-1; returns n_steps + 1
/// rows with row 0 = y0. Throws DivergenceError on a non-finite state.
Eigen::MatrixXd sindy_rollout(const SindyModel& model, std::span<const double> u, const Eigen::VectorXd& y0, int n_steps);

/// Channel-1 rollout RMSE over the validation window of every trajectory,
/// each started from its measured first validation state. Divergence
/// counts as +infinity.
double sindy_validation_rmse(const SindyModel& model, const Dataset& data);

struct LambdaSelection {
  SindyModel model;
  std::vector<double> lambdas;
  std::vector<double> val_rmse;
};

/// Fits every lambda of the grid and keeps the one with the lowest
/// validation rollout RMSE (first one on ties).
LambdaSelection select_sindy_lambda(const Dataset& data, const LibrarySpec& library, const std::vector<double>& grid,
                                    const SindyFitOptions& opts = {});

/// 1e-6, 1e-5, ..., 1e-1.
std::vector<double> default_lambda_grid();

}  // namespace pgnnl
