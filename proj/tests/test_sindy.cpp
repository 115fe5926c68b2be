#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/sindy.hpp"

namespace pgnnl {
namespace {

struct QuietWarnings {
  std::vector<std::string> seen;
  QuietWarnings() {
    set_warning_handler([this](const std::string& w) { seen.push_back(w); });
  }
  ~QuietWarnings() { set_warning_handler(nullptr); }
};

// y' = 0.9 y + 0.1 u driven by uniform random input.
Dataset linear_dataset(int n, std::uint64_t seed, std::vector<double>* u_out = nullptr) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Dataset d;
  d.dt = 1.0;
  d.t.resize(n);
  d.u.resize(n, 1);
  d.y.resize(n, 1);
  double y = 0.5;
  for (int k = 0; k < n; ++k) {
    d.t(k) = k;
    d.u(k, 0) = dist(rng);
    d.y(k, 0) = y;
    y = 0.9 * y + 0.1 * d.u(k, 0);
  }
  d.traj_id.assign(static_cast<std::size_t>(n), 0);
  d.split.assign(static_cast<std::size_t>(n), Split::Train);
  if (u_out) u_out->assign(d.u.data(), d.u.data() + n);
  return d;
}

double eval_name(const std::string& name, double y1, double y2, double u) {
  if (name == "1") return 1.0;
  if (name == "y1") return y1;
  if (name == "y2") return y2;
  if (name == "u") return u;
  if (name == "sin(y1)") return std::sin(y1);
  if (name == "cos(y1)") return std::cos(y1);
  if (name == "sin(y2)") return std::sin(y2);
  if (name == "cos(y2)") return std::cos(y2);
  if (name == "y2^2") return y2 * y2;
  if (name == "y1^2") return y1 * y1;
  if (name == "u^2") return u * u;
  if (name == "y1*y2") return y1 * y2;
  if (name == "y1*u") return y1 * u;
  if (name == "y2*u") return y2 * u;
  if (name == "sign(y2)") return y2 > 0 ? 1.0 : (y2 < 0 ? -1.0 : 0.0);
  ADD_FAILURE() << "no oracle for " << name;
  return 0.0;
}

TEST(Library, NamesRoundTrip) {
  const auto g = LibrarySpec::golf_default();
  EXPECT_EQ(g.kappa(), 8);
  EXPECT_EQ(g.names(), (std::vector<std::string>{"1", "y1", "y2", "u", "sin(y1)", "cos(y1)", "y2^2", "sign(y2)"}));
  EXPECT_EQ(LibrarySpec::from_names(2, 1, g.names()), g);
  const auto p = LibrarySpec::polynomial(2, 1, true, true);
  EXPECT_EQ(p.kappa(), 1 + 3 + 6 + 4);
  EXPECT_EQ(LibrarySpec::from_names(2, 1, p.names()), p);
  EXPECT_EQ(LibrarySpec::from_names(1, 2, {"u1*u2"}).names()[0], "u1*u2");
  EXPECT_THROW(LibrarySpec::from_names(2, 1, {"y3"}), ConfigError);
  EXPECT_THROW(LibrarySpec::from_names(2, 1, {"tan(y1)"}), ConfigError);
  EXPECT_THROW(LibrarySpec::from_names(2, 1, {}), ConfigError);
}

TEST(Library, ThreeSamplesGiveTwoRows) {
  const auto d = linear_dataset(3, 1);
  const auto s = build_snapshots(d);
  const auto psi = build_library(LibrarySpec::from_names(1, 1, {"1", "y1", "u"}), s.Y, s.U);
  ASSERT_EQ(psi.rows(), 2);
  ASSERT_EQ(psi.cols(), 3);
  EXPECT_EQ(psi.col(0), Eigen::Vector2d::Ones());
  EXPECT_EQ(psi(1, 1), d.y(1, 0));
  EXPECT_EQ(psi(1, 2), d.u(1, 0));
}

TEST(Library, SinAtZeroIsZeroColumn) {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(2, 5);
  Y.row(1).setLinSpaced(5, -1, 1);
  const Eigen::MatrixXd U = Eigen::MatrixXd::Ones(1, 5);
  const auto psi = build_library(LibrarySpec::from_names(2, 1, {"sin(y1)"}), Y, U);
  EXPECT_EQ(psi.norm(), 0.0);
}

TEST(Library, MatchesPerSampleOracle) {
  const auto spec = LibrarySpec::polynomial(2, 1, true, true);
  auto withsign = spec;
  withsign.terms.push_back({TermKind::Sign, 1, 0});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd Y(2, 40), U(1, 40);
  for (int j = 0; j < 40; ++j) {
    Y(0, j) = n01(rng);
    Y(1, j) = j == 7 ? 0.0 : n01(rng);
    U(0, j) = n01(rng);
  }
  const auto psi = build_library(withsign, Y, U);
  const auto names = withsign.names();
  for (int j = 0; j < 40; ++j)
    for (int c = 0; c < withsign.kappa(); ++c)
      EXPECT_DOUBLE_EQ(psi(j, c), eval_name(names[static_cast<std::size_t>(c)], Y(0, j), Y(1, j), U(0, j)));
  EXPECT_EQ(psi(7, withsign.kappa() - 1), 0.0);
  EXPECT_THROW(build_library(withsign, Y.topRows(1), U), ShapeError);
}

TEST(Stlsq, ZeroTargetsGiveZeroXi) {
  QuietWarnings q;
  Eigen::MatrixXd psi = Eigen::MatrixXd::Random(30, 4);
  const auto r = fit_stlsq(psi, Eigen::MatrixXd::Zero(2, 30), 0.01);
  EXPECT_EQ(r.xi, Eigen::MatrixXd::Zero(2, 4));
  EXPECT_FALSE(q.seen.empty());
}

TEST(Stlsq, RecoversLinearSystemExactly) {
  std::vector<double> u;
  const auto d = linear_dataset(200, 2, &u);
  const auto lib = LibrarySpec::from_names(1, 1, {"1", "y1", "u"});
  const auto m = fit_sindy(d, lib, 0.01);
  EXPECT_EQ(m.xi(0, 0), 0.0);
  EXPECT_NEAR(m.xi(0, 1), 0.9, 1e-10);
  EXPECT_NEAR(m.xi(0, 2), 0.1, 1e-10);
  EXPECT_EQ(m.nonzeros(), 2);

  const auto s = build_snapshots(d);
  const Eigen::MatrixXd resid = s.Yp - m.xi * build_library(lib, s.Y, s.U).transpose();
  EXPECT_LT(resid.cwiseAbs().maxCoeff(), 1e-13);

  const auto roll = sindy_rollout(m, u, d.y.row(0).transpose(), 100);
  EXPECT_LT((roll.col(0) - d.y.col(0).head(101)).cwiseAbs().maxCoeff(), 1e-8);
}

// One RK4 step of x' = A x + b u is x+ = M x + N u with the truncated series.
TEST(Stlsq, RecoversRk4DiscretizedValve) {
  ValveParams p;
  const double T = p.time_constant(), h = 5e-4;
  Eigen::Matrix2d A;
  A << 0, 1, -1 / (T * T), -2 * p.D_V / T;
  const Eigen::Vector2d b(0, p.K_V / (T * T));
  const Eigen::Matrix2d hA = h * A, I = Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d M = I + hA + hA * hA / 2 + hA * hA * hA / 6 + hA * hA * hA * hA / 24;
  const Eigen::Vector2d N = h * (I + hA / 2 + hA * hA / 6 + hA * hA * hA / 24) * b;

  const auto plant = PlantModel::valve(p);
  std::vector<Dataset> parts;
  const double ns[2] = {0, 0};
  parts.push_back(simulate_measurement(plant, Excitation::step(1e-3, 1e-3), h, 400, ns, 1));
  parts.push_back(simulate_measurement(plant, Excitation::sine(2e-3, 300.0), h, 400, ns, 2));
  parts.push_back(simulate_measurement(plant, Excitation::chirp(1e-3, 50.0, 800.0), h, 400, ns, 3));
  const auto data = concat(parts);
  Dataset all_train = data;
  std::fill(all_train.split.begin(), all_train.split.end(), Split::Train);
  const auto m = fit_sindy(all_train, LibrarySpec::valve_default(), 1e-9);
  Eigen::MatrixXd expected(2, 3);
  expected << M, N;
  ASSERT_EQ(m.nonzeros(), 6);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(m.xi(i, j), expected(i, j), 0.01 * std::abs(expected(i, j))) << i << j;
}

TEST(Stlsq, ActiveSetNeverGrows) {
  QuietWarnings q;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd psi(300, 10), Yp(3, 300);
  for (int i = 0; i < 300; ++i)
    for (int j = 0; j < 10; ++j) psi(i, j) = n01(rng);
  Eigen::MatrixXd xi_true = Eigen::MatrixXd::Zero(3, 10);
  xi_true(0, 1) = 1.0;
  xi_true(1, 4) = -0.4;
  xi_true(1, 7) = 0.2;
  xi_true(2, 0) = 0.05;
  for (int i = 0; i < 300; ++i)
    for (int r = 0; r < 3; ++r) Yp(r, i) = xi_true.row(r).dot(psi.row(i)) + 0.05 * n01(rng);
  const auto res = fit_stlsq(psi, Yp, 0.1);
  for (const auto& h : res.active_history)
    for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LE(h[k], h[k - 1]);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 10; ++j)
      if (res.xi(r, j) != 0.0) EXPECT_GE(std::abs(res.xi(r, j)), 0.1);
  EXPECT_NE(res.xi(0, 1), 0.0);
  EXPECT_EQ(res.xi(2, 0), 0.0);
}

TEST(Stlsq, ColumnScalingLeavesPredictionsUnchanged) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd Y(2, 200), U(1, 200);
  for (int j = 0; j < 200; ++j) {
    Y(0, j) = 3.0 * n01(rng);
    Y(1, j) = 0.01 * n01(rng);
    U(0, j) = 100.0 * n01(rng);
  }
  const auto lib = LibrarySpec::polynomial(2, 1, true, false);
  const Eigen::MatrixXd psi = build_library(lib, Y, U);
  Eigen::MatrixXd Yp(2, 200);
  for (int j = 0; j < 200; ++j) {
    Yp(0, j) = std::sin(Y(0, j)) + 0.3 * U(0, j) * Y(1, j);
    Yp(1, j) = std::cos(Y(1, j) * U(0, j));
  }
  const auto plain = fit_stlsq(psi, Yp, 0.0);
  const auto scaled = fit_stlsq(psi, Yp, 0.0, {20, true});
  const Eigen::MatrixXd a = psi * plain.xi.transpose(), b = psi * scaled.xi.transpose();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Stlsq, RejectsBadArguments) {
  Eigen::MatrixXd psi = Eigen::MatrixXd::Random(10, 3);
  EXPECT_THROW(fit_stlsq(psi, Eigen::MatrixXd::Zero(1, 9), 0.1), ShapeError);
  EXPECT_THROW(fit_stlsq(psi, Eigen::MatrixXd::Zero(1, 10), -1.0), ConfigError);
}

TEST(Lasso, LimitsOfThePenalty) {
  QuietWarnings q;
  const auto d = linear_dataset(200, 3);
  const auto s = build_snapshots(d);
  const auto lib = LibrarySpec::from_names(1, 1, {"1", "y1", "u"});
  const Eigen::MatrixXd psi = build_library(lib, s.Y, s.U);
  const auto small = fit_lasso(psi, s.Yp, 1e-12);
  EXPECT_NEAR(small(0, 1), 0.9, 1e-6);
  EXPECT_NEAR(small(0, 2), 0.1, 1e-6);
  EXPECT_NEAR(small(0, 0), 0.0, 1e-6);
  // Above max_j |psi_j^T y| / P (unit columns) every coefficient is zero.
  const Eigen::VectorXd norms = psi.colwise().norm().transpose();
  const double lam_max = ((psi * norms.cwiseInverse().asDiagonal()).transpose() * s.Yp.row(0).transpose())
                             .cwiseAbs()
                             .maxCoeff() /
                         static_cast<double>(psi.rows());
  EXPECT_EQ(fit_lasso(psi, s.Yp, lam_max * 1.0001).norm(), 0.0);
  EXPECT_GT(fit_lasso(psi, s.Yp, lam_max * 0.9).norm(), 0.0);

  SindyFitOptions opts;
  opts.solver = SindySolver::Lasso;
  const auto m = fit_sindy(d, lib, 1e-12, opts);
  EXPECT_EQ(m.solver, SindySolver::Lasso);
  EXPECT_NEAR(m.xi(0, 1), 0.9, 1e-6);
}

SindyModel model_with(const Eigen::MatrixXd& xi) {
  SindyModel m;
  m.library = LibrarySpec::valve_default();
  m.xi = xi;
  m.dt = 1e-3;
  return m;
}

TEST(Rollout, IdentityIsConstant) {
  Eigen::MatrixXd xi(2, 3);
  xi << 1, 0, 0, 0, 1, 0;
  const std::vector<double> u(50, 3.0);
  const auto r = sindy_rollout(model_with(xi), u, Eigen::Vector2d(0.2, -1.0), 50);
  for (int k = 0; k <= 50; ++k) EXPECT_EQ(r.row(k), Eigen::RowVector2d(0.2, -1.0));
}

TEST(Rollout, ZeroXiCollapses) {
  const std::vector<double> u(5, 1.0);
  const auto r = sindy_rollout(model_with(Eigen::MatrixXd::Zero(2, 3)), u, Eigen::Vector2d(1, 2), 5);
  EXPECT_EQ(r.row(0), Eigen::RowVector2d(1, 2));
  EXPECT_EQ(r.bottomRows(5).norm(), 0.0);
}

TEST(Rollout, DivergenceNamesStep) {
  Eigen::MatrixXd xi(2, 3);
  xi << 4, 0, 0, 0, 1, 0;
  const std::vector<double> u(1000, 0.0);
  try {
    sindy_rollout(model_with(xi), u, Eigen::Vector2d(1, 0), 1000);
    FAIL();
  } catch (const DivergenceError& e) {
    // 4^k overflows to inf at k = 512 (2^1024).
    EXPECT_EQ(e.step(), 512);
  }
  EXPECT_THROW(sindy_rollout(model_with(xi), u, Eigen::Vector2d(1, 0), 1001), ShapeError);
}

TEST(SindyModel, JsonRoundTrip) {
  const auto d = linear_dataset(100, 4);
  const auto m = fit_sindy(d, LibrarySpec::from_names(1, 1, {"1", "y1", "u", "y1*u"}), 0.01);
  const nlohmann::json j = m;
  const auto back = j.get<SindyModel>();
  EXPECT_EQ(back.library, m.library);
  EXPECT_EQ(back.xi, m.xi);
  EXPECT_EQ(back.lambda, m.lambda);
  EXPECT_EQ(back.dt, m.dt);
  auto bad = j;
  bad["extra"] = 0;
  EXPECT_THROW(bad.get<SindyModel>(), ConfigError);
  bad = j;
  bad["xi"] = {{1.0, 2.0}};
  EXPECT_THROW(bad.get<SindyModel>(), ConfigError);
}

TEST(LambdaGrid, PicksLowestValidationRmse) {
  QuietWarnings q;
  const auto truth = PlantModel::golf(GolfParams{});
  const double ns[2] = {1e-4, 1e-3};
  std::vector<Dataset> parts = {simulate_measurement(truth, Excitation::sine(0.3, 0.7), 1e-3, 1500, ns, 1),
                                simulate_measurement(truth, Excitation::chirp(0.3, 0.2, 2.0), 1e-3, 1500, ns, 2)};
  const auto data = split_60_20_20(concat(parts), SplitMode::Contiguous, 0);
  const auto sel = select_sindy_lambda(data, LibrarySpec::golf_default(), default_lambda_grid());
  ASSERT_EQ(sel.val_rmse.size(), 6u);
  const auto best = std::min_element(sel.val_rmse.begin(), sel.val_rmse.end()) - sel.val_rmse.begin();
  EXPECT_EQ(sel.model.lambda, sel.lambdas[static_cast<std::size_t>(best)]);
  EXPECT_TRUE(std::isfinite(sel.val_rmse[static_cast<std::size_t>(best)]));
  EXPECT_NEAR(sindy_validation_rmse(sel.model, data), sel.val_rmse[static_cast<std::size_t>(best)], 0.0);
  EXPECT_THROW(fit_sindy(data, LibrarySpec::from_names(1, 1, {"y1"}), 0.01), ConfigError);
}

}  // namespace
}  // namespace pgnnl
