#include <cmath>

#include <gtest/gtest.h>

#include "pgnnl/errors.hpp"
#include "pgnnl/hyperopt.hpp"
#include "pgnnl/io.hpp"

namespace pgnnl {
namespace {

// Upper 1 % point of chi-square with 9 degrees of freedom.
constexpr double kChi2Df9P01 = 21.666;

double chi2_stat(const std::vector<int>& counts, double expected) {
  double s = 0.0;
  for (int c : counts) s += (c - expected) * (c - expected) / expected;
  return s;
}

SearchSpace toy_space() {
  SearchSpace s;
  s.params = {{"x", ParamKind::Real, 0.0, 1.0, {}}};
  return s;
}

Objective toy_objective(int* calls = nullptr) {
  return [calls](const nlohmann::json& c, std::uint64_t) {
    if (calls) ++*calls;
    const double x = c["x"].get<double>();
    return TrialOutcome{(x - 0.3) * (x - 0.3), x, 1 - x};
  };
}

TEST(SearchSpace, UnitMappingsStayInDomain) {
  const auto s = SearchSpace::pgnn_default();
  for (double t : {0.0, 1e-12, 0.25, 0.5, 0.999999, 1.0}) {
    const auto c = s.from_unit(Eigen::VectorXd::Constant(5, t));
    EXPECT_TRUE(s.contains(c)) << c.dump();
  }
  const auto lo = s.from_unit(Eigen::VectorXd::Zero(5));
  EXPECT_EQ(lo["width"], 2);
  EXPECT_EQ(lo["layers"], 1);
  EXPECT_DOUBLE_EQ(lo["learning_rate"].get<double>(), 1e-4);
  EXPECT_EQ(lo["activation"], "tanh");
  const auto hi = s.from_unit(Eigen::VectorXd::Ones(5));
  EXPECT_EQ(hi["width"], 128);
  EXPECT_EQ(hi["layers"], 3);
  EXPECT_NEAR(hi["learning_rate"].get<double>(), 1e-2, 1e-15);
  EXPECT_EQ(hi["activation"], "relu");
  // Round trip through the unit cube hits the same config.
  const auto mid = s.from_unit(Eigen::VectorXd::Constant(5, 0.37));
  const auto rt = s.from_unit(s.to_unit(mid));
  for (const char* k : {"width", "layers", "activation"}) EXPECT_EQ(rt[k], mid[k]);
  for (const char* k : {"learning_rate", "lambda_phy"})
    EXPECT_NEAR(rt[k].get<double>(), mid[k].get<double>(), 1e-12 * mid[k].get<double>());
  EXPECT_FALSE(s.contains(nlohmann::json{{"width", 200}}));
}

TEST(SearchSpace, JsonAndValidation) {
  const auto s = SearchSpace::pgnn_default();
  const nlohmann::json j = s;
  const auto back = j.get<SearchSpace>();
  EXPECT_EQ(nlohmann::json(back), j);
  SearchSpace bad;
  bad.params = {{"lr", ParamKind::LogReal, 0.0, 1.0, {}}};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.params = {{"a", ParamKind::Int, 1.5, 3, {}}};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.params = {{"a", ParamKind::Real, 0, 1, {}}, {"a", ParamKind::Real, 0, 1, {}}};
  EXPECT_THROW(bad.validate(), ConfigError);
  auto jj = j;
  jj["params"][0]["kind"] = "float";
  EXPECT_THROW(jj.get<SearchSpace>(), ConfigError);
}

TEST(SearchSpace, RandomSamplesPassUniformityCheck) {
  const auto s = SearchSpace::pgnn_default();
  Rng rng(2024);
  std::vector<int> width(10), layers(3), lr(10), lam(10), act(2);
  for (int i = 0; i < 1000; ++i) {
    const auto c = s.sample(rng);
    ASSERT_TRUE(s.contains(c));
    // width 2..128 has 127 values; bins by unit-cube decile.
    width[std::min<std::size_t>(9, static_cast<std::size_t>((c["width"].get<int>() - 2) * 10 / 127))]++;
    layers[static_cast<std::size_t>(c["layers"].get<int>() - 1)]++;
    lr[std::min<std::size_t>(9, static_cast<std::size_t>((std::log10(c["learning_rate"].get<double>()) + 4) / 2 * 10))]++;
    lam[std::min<std::size_t>(9, static_cast<std::size_t>((c["lambda_phy"].get<double>() - 0.01) / 0.98 * 10))]++;
    act[c["activation"] == "tanh" ? 0 : 1]++;
  }
  EXPECT_LT(chi2_stat(lr, 100), kChi2Df9P01);
  EXPECT_LT(chi2_stat(lam, 100), kChi2Df9P01);
  // Width deciles of 127 integers hold 12 or 13 values each.
  double w = 0.0;
  for (std::size_t b = 0; b < 10; ++b) {
    int n = 0;
    for (int v = 2; v <= 128; ++v) n += static_cast<std::size_t>((v - 2) * 10 / 127) == b;
    const double e = 1000.0 * n / 127.0;
    w += (width[b] - e) * (width[b] - e) / e;
  }
  EXPECT_LT(w, kChi2Df9P01);
  // 2 and 1 degrees of freedom: 9.210 and 6.635.
  EXPECT_LT(chi2_stat(layers, 1000.0 / 3), 9.210);
  EXPECT_LT(chi2_stat(act, 500), 6.635);
}

TEST(Search, BudgetOneReturnsThatTrial) {
  SearchOptions o;
  o.budget = 1;
  o.seed = 10;
  const auto r = search(toy_space(), toy_objective(), o);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.best.index, 0);
  EXPECT_EQ(r.best.seed, 10u);
  EXPECT_EQ(r.best.config, r.records[0].config);
}

TEST(Search, SurrogateFindsQuadraticMinimum) {
  SearchOptions o;
  o.budget = 30;
  o.seed = 1;
  const auto r = search(toy_space(), toy_objective(), o);
  EXPECT_NEAR(r.best.config["x"].get<double>(), 0.3, 0.05);
}

TEST(Search, DeterministicAndSeededPerTrial) {
  for (auto strat : {SearchStrategy::Random, SearchStrategy::Surrogate}) {
    SearchOptions o;
    o.budget = 12;
    o.seed = 77;
    o.strategy = strat;
    const auto a = search(SearchSpace::pgnn_default(), [](const nlohmann::json& c, std::uint64_t s) {
      return TrialOutcome{c["lambda_phy"].get<double>() + 1e-3 * c["width"].get<double>() + 1e-9 * static_cast<double>(s), 0, 0};
    }, o);
    const auto b = search(SearchSpace::pgnn_default(), [](const nlohmann::json& c, std::uint64_t s) {
      return TrialOutcome{c["lambda_phy"].get<double>() + 1e-3 * c["width"].get<double>() + 1e-9 * static_cast<double>(s), 0, 0};
    }, o);
    EXPECT_EQ(trials_to_jsonl(a.records), trials_to_jsonl(b.records));
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].seed, 77u + i);
      EXPECT_TRUE(SearchSpace::pgnn_default().contains(a.records[i].config));
    }
  }
}

TEST(Search, FailuresAreRecordedAndAllFailedThrows) {
  SearchOptions o;
  o.budget = 6;
  o.strategy = SearchStrategy::Random;
  int calls = 0;
  const auto r = search(toy_space(), [&](const nlohmann::json& c, std::uint64_t) {
    ++calls;
    if (c["x"].get<double>() > 0.5) throw DivergenceError("boom", 3);
    if (calls == 2) return TrialOutcome{std::nan(""), 0, 0};
    return TrialOutcome{c["x"].get<double>(), 0, 0};
  }, o);
  EXPECT_EQ(calls, 6);
  for (const auto& rec : r.records) {
    if (rec.failed) EXPECT_FALSE(rec.error.empty());
    const auto j = trial_to_json(rec);
    EXPECT_EQ(j.contains("objective"), !rec.failed);
    EXPECT_FALSE(j.contains("wall_time"));
  }
  EXPECT_FALSE(r.best.failed);
  EXPECT_TRUE(trial_to_json(r.best, true).contains("wall_time"));
  EXPECT_THROW(search(toy_space(), [](const nlohmann::json&, std::uint64_t) -> TrialOutcome {
    throw ConfigError("never");
  }, o), SearchError);
}

TEST(GaussianProcess, InterpolatesAndReportsUncertainty) {
  GaussianProcess gp(0.2, 1e-6);
  Eigen::MatrixXd X(3, 1);
  X << 0.1, 0.5, 0.9;
  gp.fit(X, Eigen::Vector3d(1.0, -2.0, 3.0));
  for (int i = 0; i < 3; ++i) {
    const auto [m, s] = gp.predict(X.row(i).transpose());
    EXPECT_NEAR(m, Eigen::Vector3d(1.0, -2.0, 3.0)(i), 1e-4);
    EXPECT_LT(s, 1e-2);
  }
  const auto [m_far, s_far] = gp.predict(Eigen::VectorXd::Constant(1, 5.0));
  EXPECT_NEAR(m_far, 2.0 / 3.0, 1e-9);  // reverts to the target mean
  EXPECT_GT(s_far, 2.0);
}

TEST(GaussianProcess, ExpectedImprovementClosedForm) {
  EXPECT_DOUBLE_EQ(expected_improvement(1.0, 0.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(expected_improvement(3.0, 0.0, 2.0), 0.0);
  // mean == best: sd * phi(0)
  EXPECT_NEAR(expected_improvement(2.0, 0.5, 2.0), 0.5 / std::sqrt(2 * M_PI), 1e-15);
}

TEST(Pareto, FlagsMatchBruteForce) {
  Rng rng(3);
  std::vector<ParetoPoint> pts(40);
  for (auto& p : pts) {
    p.L_error = std::round(uniform01(rng) * 10) / 10;
    p.L_phy = std::round(uniform01(rng) * 10) / 10;
  }
  pts[5].failed = true;
  flag_nondominated(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dom = false;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i && !pts[j].failed && pts[j].L_error <= pts[i].L_error && pts[j].L_phy <= pts[i].L_phy &&
          (pts[j].L_error < pts[i].L_error || pts[j].L_phy < pts[i].L_phy))
        dom = true;
    EXPECT_EQ(pts[i].nondominated, !pts[i].failed && !dom) << i;
  }
}

TEST(Pareto, GridDedupeAndCsv) {
  std::vector<std::string> warnings;
  set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
  EXPECT_EQ(dedupe_lambda_grid({0.1, 0.5, 0.1, 0.5, 0.9}), (std::vector<double>{0.1, 0.5, 0.9}));
  set_warning_handler(nullptr);
  EXPECT_EQ(warnings.size(), 2u);
  EXPECT_THROW(dedupe_lambda_grid({}), ConfigError);
  EXPECT_THROW(dedupe_lambda_grid({0.5, 1.5}), ConfigError);

  std::vector<ParetoPoint> pts = {{0.0, 1.0, 2.0, true, false, ""}, {0.5, 0.0, 0.0, false, true, "x"}};
  EXPECT_EQ(pareto_to_csv(pts), "lambda_phy,L_error,L_phy,nondominated\n0,1,2,1\n0.5,nan,nan,0\n");
}

Dataset small_golf() {
  const auto truth = PlantModel::golf(GolfParams{});
  const double ns[2] = {1e-3, 1e-2};
  std::vector<Dataset> parts = {simulate_measurement(truth, Excitation::sine(0.4, 1.0), 1e-3, 500, ns, 1),
                                simulate_measurement(truth, Excitation::chirp(0.3, 0.5, 3.0), 1e-3, 500, ns, 2)};
  return split_60_20_20(concat(parts), SplitMode::Contiguous, 0);
}

PgnnConfig small_pgnn() {
  DegradationSpec ds;
  ds.scale = {{"mu", 0.5}, {"d", 0.5}};
  PgnnConfig cfg;
  cfg.prior = make_prior(PlantModel::golf(GolfParams{}), ds);
  cfg.hidden = {8};
  cfg.train.epochs = 10;
  cfg.train.batch_size = 64;
  return cfg;
}

TEST(Pareto, SweepOnGolfData) {
  const auto data = small_golf();
  std::vector<double> grid;
  for (int i = 0; i < 10; ++i) grid.push_back(0.01 + 0.1 * i);
  grid.insert(grid.begin(), 0.0);
  const auto pts = pareto_sweep(grid, small_pgnn(), data);
  ASSERT_EQ(pts.size(), 11u);
  int flagged = 0;
  for (const auto& p : pts) {
    EXPECT_FALSE(p.failed) << p.error;
    EXPECT_GT(p.L_phy, 0.0);  // reported at lambda = 0 as well
    flagged += p.nondominated;
  }
  EXPECT_GE(flagged, 1);
  auto copy = pts;
  flag_nondominated(copy);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(copy[i].nondominated, pts[i].nondominated);
  // Same seed and lambda reproduce the point.
  const auto again = pareto_sweep({grid[3]}, small_pgnn(), data);
  EXPECT_EQ(again[0].L_error, pts[3].L_error);
  EXPECT_EQ(again[0].L_phy, pts[3].L_phy);
}

TEST(PgnnObjective, AppliesConfigAndScoresRollout) {
  const auto data = small_golf();
  const auto obj = pgnn_objective(small_pgnn(), data);
  const nlohmann::json c = {{"width", 6}, {"layers", 2}, {"learning_rate", 3e-3}, {"lambda_phy", 0.3},
                            {"activation", "relu"}};
  const auto a = obj(c, 5), b = obj(c, 5);
  EXPECT_TRUE(std::isfinite(a.objective));
  EXPECT_GT(a.objective, 0.0);
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_EQ(a.L_error, b.L_error);
  PgnnConfig cfg;
  apply_search_config(c, cfg);
  EXPECT_EQ(cfg.hidden, (std::vector<int>{6, 6}));
  EXPECT_EQ(cfg.activation, Activation::Relu);
  EXPECT_EQ(cfg.lambda_phy, 0.3);
  EXPECT_THROW(apply_search_config({{"depth", 2}}, cfg), ConfigError);
}

}  // namespace
}  // namespace pgnnl
