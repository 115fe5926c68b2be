#include "pgnnl/sindy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"

namespace pgnnl {

std::string LibrarySpec::variable_name(int v) const {
  if (v < state_dim) return "y" + std::to_string(v + 1);
  if (input_dim == 1) return "u";
  return "u" + std::to_string(v - state_dim + 1);
}

std::vector<std::string> LibrarySpec::names() const {
  std::vector<std::string> out;
  for (const auto& t : terms) {
    switch (t.kind) {
      case TermKind::Constant: out.push_back("1"); break;
      case TermKind::Linear: out.push_back(variable_name(t.a)); break;
      case TermKind::Sin: out.push_back("sin(" + variable_name(t.a) + ")"); break;
      case TermKind::Cos: out.push_back("cos(" + variable_name(t.a) + ")"); break;
      case TermKind::Sign: out.push_back("sign(" + variable_name(t.a) + ")"); break;
      case TermKind::Product:
        out.push_back(t.a == t.b ? variable_name(t.a) + "^2" : variable_name(t.a) + "*" + variable_name(t.b));
        break;
    }
  }
  return out;
}

void LibrarySpec::validate() const {
  if (terms.empty()) throw ConfigError("library: no candidate terms");
  if (state_dim < 1 || input_dim < 0) throw ConfigError("library: bad dimensions");
  const int nv = state_dim + input_dim;
  for (const auto& t : terms) {
    if (t.kind == TermKind::Constant) continue;
    if (t.a < 0 || t.a >= nv || (t.kind == TermKind::Product && (t.b < 0 || t.b >= nv)))
      throw ConfigError("library: term refers to a missing variable");
  }
}

namespace {

int parse_variable(const LibrarySpec& s, const std::string& name) {
  for (int v = 0; v < s.state_dim + s.input_dim; ++v)
    if (s.variable_name(v) == name) return v;
  throw ConfigError("library: unknown variable '" + name + "'");
}

LibraryTerm parse_term(const LibrarySpec& s, const std::string& name) {
  if (name == "1") return {TermKind::Constant, 0, 0};
  for (auto [prefix, kind] : {std::pair{"sin(", TermKind::Sin}, {"cos(", TermKind::Cos}, {"sign(", TermKind::Sign}}) {
    const std::string p = prefix;
    if (name.rfind(p, 0) == 0) {
      if (name.back() != ')') throw ConfigError("library: malformed term '" + name + "'");
      return {kind, parse_variable(s, name.substr(p.size(), name.size() - p.size() - 1)), 0};
    }
  }
  if (name.size() > 2 && name.ends_with("^2")) {
    const int v = parse_variable(s, name.substr(0, name.size() - 2));
    return {TermKind::Product, v, v};
  }
  if (const auto star = name.find('*'); star != std::string::npos)
    return {TermKind::Product, parse_variable(s, name.substr(0, star)), parse_variable(s, name.substr(star + 1))};
  return {TermKind::Linear, parse_variable(s, name), 0};
}

}  // namespace

LibrarySpec LibrarySpec::from_names(int state_dim, int input_dim, const std::vector<std::string>& names) {
  LibrarySpec s;
  s.state_dim = state_dim;
  s.input_dim = input_dim;
  for (const auto& n : names) s.terms.push_back(parse_term(s, n));
  s.validate();
  return s;
}

LibrarySpec LibrarySpec::golf_default() {
  return from_names(2, 1, {"1", "y1", "y2", "u", "sin(y1)", "cos(y1)", "y2^2", "sign(y2)"});
}

LibrarySpec LibrarySpec::valve_default() { return from_names(2, 1, {"y1", "y2", "u"}); }

LibrarySpec LibrarySpec::polynomial(int state_dim, int input_dim, bool products, bool trig) {
  LibrarySpec s;
  s.state_dim = state_dim;
  s.input_dim = input_dim;
  const int nv = state_dim + input_dim;
  s.terms.push_back({TermKind::Constant, 0, 0});
  for (int v = 0; v < nv; ++v) s.terms.push_back({TermKind::Linear, v, 0});
  if (products)
    for (int a = 0; a < nv; ++a)
      for (int b = a; b < nv; ++b) s.terms.push_back({TermKind::Product, a, b});
  if (trig)
    for (int v = 0; v < state_dim; ++v) {
      s.terms.push_back({TermKind::Sin, v, 0});
      s.terms.push_back({TermKind::Cos, v, 0});
    }
  s.validate();
  return s;
}

namespace {

double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double term_value(const LibraryTerm& t, const auto& var) {
  switch (t.kind) {
    case TermKind::Constant: return 1.0;
    case TermKind::Linear: return var(t.a);
    case TermKind::Sin: return std::sin(var(t.a));
    case TermKind::Cos: return std::cos(var(t.a));
    case TermKind::Sign: return sign_of(var(t.a));
    case TermKind::Product: return var(t.a) * var(t.b);
  }
  return 0.0;
}

}  // namespace

Eigen::RowVectorXd evaluate_library(const LibrarySpec& spec, const Eigen::VectorXd& y, const Eigen::VectorXd& u) {
  if (y.size() != spec.state_dim || u.size() != spec.input_dim)
    throw ShapeError("evaluate_library: state/input widths do not match the library");
  Eigen::VectorXd v(spec.state_dim + spec.input_dim);
  v << y, u;
  Eigen::RowVectorXd row(spec.kappa());
  for (int j = 0; j < spec.kappa(); ++j) row(j) = term_value(spec.terms[static_cast<std::size_t>(j)], v);
  return row;
}

Eigen::MatrixXd build_library(const LibrarySpec& spec, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& U) {
  spec.validate();
  if (Y.rows() != spec.state_dim || U.rows() != spec.input_dim || (spec.input_dim > 0 && U.cols() != Y.cols()))
    throw ShapeError("build_library: snapshot shapes do not match the library");
  Eigen::MatrixXd V(Y.rows() + U.rows(), Y.cols());
  V.topRows(Y.rows()) = Y;
  if (U.rows() > 0) V.bottomRows(U.rows()) = U;
  Eigen::MatrixXd psi(Y.cols(), spec.kappa());
  for (int j = 0; j < spec.kappa(); ++j) {
    const auto& t = spec.terms[static_cast<std::size_t>(j)];
    for (Eigen::Index p = 0; p < Y.cols(); ++p) psi(p, j) = term_value(t, V.col(p));
  }
  return psi;
}

std::string to_string(SindySolver s) { return s == SindySolver::Stlsq ? "stlsq" : "lasso"; }

SindySolver sindy_solver_from_string(const std::string& s) {
  if (s == "stlsq") return SindySolver::Stlsq;
  if (s == "lasso") return SindySolver::Lasso;
  throw ConfigError("unknown sindy solver '" + s + "'");
}

namespace {

Eigen::VectorXd column_norms(const Eigen::MatrixXd& psi, bool normalize) {
  Eigen::VectorXd n = Eigen::VectorXd::Ones(psi.cols());
  if (!normalize) return n;
  for (Eigen::Index j = 0; j < psi.cols(); ++j) {
    const double c = psi.col(j).norm();
    n(j) = c > 0 ? c : 1.0;
  }
  return n;
}

void check_fit_shapes(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& Yp, double lambda) {
  if (psi.rows() != Yp.cols()) throw ShapeError("sindy fit: Psi rows must equal the snapshot count");
  if (psi.cols() == 0) throw ShapeError("sindy fit: empty library");
  if (!(lambda >= 0)) throw ConfigError("sindy fit: lambda must be >= 0");
  if (!psi.allFinite() || !Yp.allFinite()) throw DomainError("sindy fit: non-finite data");
}

}  // namespace

StlsqResult fit_stlsq(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& Yp, double lambda, const StlsqOptions& opts) {
  check_fit_shapes(psi, Yp, lambda);
  if (opts.max_iter < 1) throw ConfigError("stlsq: max_iter must be >= 1");
  const Eigen::Index kappa = psi.cols();
  if (psi.rows() < kappa) warn("stlsq: fewer snapshots than candidate terms");

  const Eigen::VectorXd norms = column_norms(psi, opts.normalize_columns);
  const Eigen::MatrixXd scaled = psi * norms.cwiseInverse().asDiagonal();

  StlsqResult res;
  res.xi = Eigen::MatrixXd::Zero(Yp.rows(), kappa);
  bool rank_warned = false;
  for (Eigen::Index i = 0; i < Yp.rows(); ++i) {
    std::vector<bool> active(static_cast<std::size_t>(kappa), true);
    std::vector<int> history;
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(kappa);
    const Eigen::VectorXd target = Yp.row(i).transpose();
    for (int it = 0; it < opts.max_iter; ++it) {
      std::vector<Eigen::Index> cols;
      for (Eigen::Index j = 0; j < kappa; ++j)
        if (active[static_cast<std::size_t>(j)]) cols.push_back(j);
      history.push_back(static_cast<int>(cols.size()));
      coef.setZero();
      if (cols.empty()) {
        warn("stlsq: every coefficient of output row " + std::to_string(i + 1) + " was thresholded away");
        break;
      }
      const Eigen::MatrixXd A = scaled(Eigen::all, cols);
      const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
      if (qr.rank() < A.cols() && !rank_warned) {
        warn("stlsq: library matrix is rank deficient on the active set");
        rank_warned = true;
      }
      const Eigen::VectorXd sol = qr.solve(target);
      for (std::size_t c = 0; c < cols.size(); ++c) coef(cols[c]) = sol(static_cast<Eigen::Index>(c));

      bool changed = false;
      for (Eigen::Index j : cols)
        if (std::abs(coef(j)) < lambda) {
          active[static_cast<std::size_t>(j)] = false;
          coef(j) = 0.0;
          changed = true;
        }
      if (!changed) break;
    }
    res.xi.row(i) = coef.cwiseQuotient(norms).transpose();
    res.iterations = std::max(res.iterations, static_cast<int>(history.size()));
    res.active_history.push_back(std::move(history));
  }
  return res;
}

Eigen::MatrixXd fit_lasso(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& Yp, double lambda, const LassoOptions& opts) {
  check_fit_shapes(psi, Yp, lambda);
  const Eigen::Index kappa = psi.cols();
  const auto P = static_cast<double>(psi.rows());
  const Eigen::VectorXd norms = column_norms(psi, opts.normalize_columns);
  const Eigen::MatrixXd A = psi * norms.cwiseInverse().asDiagonal();
  const Eigen::VectorXd sq = A.colwise().squaredNorm().transpose();

  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(Yp.rows(), kappa);
  for (Eigen::Index i = 0; i < Yp.rows(); ++i) {
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(kappa);
    Eigen::VectorXd r = Yp.row(i).transpose();
    int it = 0;
    for (; it < opts.max_iter; ++it) {
      double max_change = 0.0, max_coef = 0.0;
      for (Eigen::Index j = 0; j < kappa; ++j) {
        if (sq(j) == 0.0) continue;
        const double rho = A.col(j).dot(r) + sq(j) * coef(j);
        const double shrunk = std::copysign(std::max(std::abs(rho) - P * lambda, 0.0), rho) / sq(j);
        const double delta = shrunk - coef(j);
        if (delta != 0.0) {
          r -= delta * A.col(j);
          coef(j) = shrunk;
        }
        max_change = std::max(max_change, std::abs(delta));
        max_coef = std::max(max_coef, std::abs(shrunk));
      }
      if (max_change <= opts.tolerance * std::max(1.0, max_coef)) break;
    }
    if (it == opts.max_iter) warn("lasso: coordinate descent hit max_iter before converging");
    xi.row(i) = coef.cwiseQuotient(norms).transpose();
  }
  return xi;
}

void SindyModel::validate() const {
  library.validate();
  if (xi.rows() != library.state_dim || xi.cols() != library.kappa())
    throw ConfigError("sindy model: Xi must be state_dim x kappa");
  if (!(dt > 0)) throw ConfigError("sindy model: dt must be > 0");
  if (!xi.allFinite()) throw ConfigError("sindy model: non-finite coefficients");
}

int SindyModel::nonzeros() const { return static_cast<int>((xi.array() != 0.0).count()); }

void to_json(nlohmann::json& j, const SindyModel& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.xi.rows(); ++i) {
    std::vector<double> r(m.xi.cols());
    for (Eigen::Index c = 0; c < m.xi.cols(); ++c) r[static_cast<std::size_t>(c)] = m.xi(i, c);
    rows.push_back(r);
  }
  j = {{"library",
        {{"state_dim", m.library.state_dim}, {"input_dim", m.library.input_dim}, {"terms", m.library.names()}}},
       {"xi", rows},
       {"lambda", m.lambda},
       {"dt", m.dt},
       {"solver", to_string(m.solver)},
       {"normalize_columns", m.normalize_columns}};
}

void from_json(const nlohmann::json& j, SindyModel& m) {
  require_keys_subset(j, {"library", "xi", "lambda", "dt", "solver", "normalize_columns"}, "sindy model");
  const auto lib = read_required<nlohmann::json>(j, "library", "sindy model");
  require_keys_subset(lib, {"state_dim", "input_dim", "terms"}, "sindy library");
  m.library = LibrarySpec::from_names(read_required<int>(lib, "state_dim", "sindy library"),
                                      read_required<int>(lib, "input_dim", "sindy library"),
                                      read_required<std::vector<std::string>>(lib, "terms", "sindy library"));
  const auto rows = read_required<std::vector<std::vector<double>>>(j, "xi", "sindy model");
  m.xi.resize(static_cast<Eigen::Index>(rows.size()), m.library.kappa());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != m.library.kappa()) throw ConfigError("sindy model: Xi row width != kappa");
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      m.xi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  }
  m.lambda = read_required<double>(j, "lambda", "sindy model");
  m.dt = read_required<double>(j, "dt", "sindy model");
  std::string solver = "stlsq";
  read_optional(j, "solver", solver, "sindy model");
  m.solver = sindy_solver_from_string(solver);
  read_optional(j, "normalize_columns", m.normalize_columns, "sindy model");
  m.validate();
}

SindyModel fit_sindy(const Dataset& data, const LibrarySpec& library, double lambda, const SindyFitOptions& opts) {
  library.validate();
  if (library.state_dim != data.output_dim() || library.input_dim != data.input_dim())
    throw ConfigError("sindy: library dimensions do not match the dataset");
  const SnapshotMatrices s = build_snapshots(data, Split::Train);
  const Eigen::MatrixXd psi = build_library(library, s.Y, s.U);
  SindyModel m;
  m.library = library;
  m.lambda = lambda;
  m.dt = data.dt;
  m.solver = opts.solver;
  if (opts.solver == SindySolver::Stlsq) {
    m.xi = fit_stlsq(psi, s.Yp, lambda, opts.stlsq).xi;
    m.normalize_columns = opts.stlsq.normalize_columns;
  } else {
    m.xi = fit_lasso(psi, s.Yp, lambda, opts.lasso);
    m.normalize_columns = opts.lasso.normalize_columns;
  }
  return m;
}

Eigen::MatrixXd sindy_rollout(const SindyModel& model, std::span<const double> u, const Eigen::VectorXd& y0, int n_steps) {
  const int l = model.library.state_dim;
  if (y0.size() != l) throw ShapeError("sindy_rollout: y0 width does not match the model");
  if (model.library.input_dim > 1) throw ShapeError("sindy_rollout: single-input models only");
  if (n_steps < 0 || u.size() < static_cast<std::size_t>(n_steps))
    throw ShapeError("sindy_rollout: need at least n_steps input samples");
  if (model.xi.rows() != l || model.xi.cols() != model.library.kappa())
    throw ShapeError("sindy_rollout: Xi does not match the library");
  Eigen::MatrixXd out(n_steps + 1, l);
  out.row(0) = y0.transpose();
  Eigen::VectorXd y = y0, uk(model.library.input_dim);
  for (int k = 0; k < n_steps; ++k) {
    if (model.library.input_dim == 1) uk(0) = u[static_cast<std::size_t>(k)];
    y = model.xi * evaluate_library(model.library, y, uk).transpose();
    if (!y.allFinite()) throw DivergenceError("sindy_rollout: non-finite state", k + 1);
    out.row(k + 1) = y.transpose();
  }
  return out;
}

double sindy_validation_rmse(const SindyModel& model, const Dataset& data) {
  double sum = 0.0;
  Eigen::Index count = 0;
  for (const auto& [b, e] : data.trajectory_ranges()) {
    Eigen::Index v0 = -1, v1 = -1;
    for (Eigen::Index k = b; k < e; ++k)
      if (data.split[static_cast<std::size_t>(k)] == Split::Val) {
        if (v0 < 0) v0 = k;
        else if (k != v1 + 1) throw ConfigError("sindy: validation records of a trajectory are not contiguous");
        v1 = k;
      }
    if (v0 < 0 || v1 == v0) continue;
    const auto n = static_cast<int>(v1 - v0);
    const Eigen::VectorXd u = data.u.col(0).segment(v0, n);
    Eigen::MatrixXd pred;
    try {
      pred = sindy_rollout(model, std::span<const double>(u.data(), static_cast<std::size_t>(n)),
                           data.y.row(v0).transpose(), n);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    }
    sum += (pred.col(0) - data.y.col(0).segment(v0, n + 1)).squaredNorm();
    count += n + 1;
  }
  if (count == 0) throw ConfigError("sindy: dataset has no validation window to score");
  const double r = std::sqrt(sum / static_cast<double>(count));
  return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

LambdaSelection select_sindy_lambda(const Dataset& data, const LibrarySpec& library, const std::vector<double>& grid,
                                    const SindyFitOptions& opts) {
  if (grid.empty()) throw ConfigError("sindy: empty lambda grid");
  LambdaSelection sel;
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    SindyModel m = fit_sindy(data, library, lambda, opts);
    const double r = sindy_validation_rmse(m, data);
    sel.lambdas.push_back(lambda);
    sel.val_rmse.push_back(r);
    if (r < best || sel.lambdas.size() == 1) {
      best = r;
      sel.model = std::move(m);
    }
  }
  return sel;
}

std::vector<double> default_lambda_grid() { return {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}; }

}  // namespace pgnnl
