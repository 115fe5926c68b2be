#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "pgnnl/cli.hpp"
#include "pgnnl/io.hpp"

namespace fs = std::filesystem;
using namespace pgnnl;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / "pgnnl_cli_test" / info->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Small golf run: 1 s trajectories, one 8-unit layer, a few epochs.
  static nlohmann::json small_config() {
    return {{"seed", 3},
            {"experiment",
             {{"plant", "golf"},
              {"duration", 1.0},
              {"network", {{"hidden", {8}}, {"epochs", 8}, {"restarts", 1}}},
              {"seeds", {1}},
              {"evaluation", {{"duration", 0.5}}}}},
            {"search", {{"budget", 5}, {"initial_random", 2}}}};
  }

  std::string write_config(const nlohmann::json& j, const std::string& name = "config.json") {
    const fs::path p = dir_ / name;
    write_file_atomic(p, j.dump(2));
    return p.string();
  }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Every file under `a` exists under `b` with the same bytes, and vice versa.
void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  ASSERT_EQ(fa, fb);
  for (const auto& f : fa) EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

}  // namespace

TEST_F(CliTest, GenDataWritesSixTrajectoriesAndSidecar) {
  const auto r = cli({"gen-data", "--config", write_config(small_config()), "--out", path("data")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  int csv = 0;
  for (const auto& e : fs::directory_iterator(path("data")))
    if (e.path().extension() == ".csv") ++csv;
  EXPECT_EQ(csv, 6);
  EXPECT_TRUE(fs::exists(path("data/dataset.json")));
  EXPECT_TRUE(fs::exists(path("data/resolved_config.json")));
  EXPECT_NE(r.out.find("trajectories: 6"), std::string::npos);
  EXPECT_NE(r.out.find("samples: 6006"), std::string::npos);
  EXPECT_NE(r.out.find("noise_std:"), std::string::npos);
}

TEST_F(CliTest, GenDataCreatesMissingOutputDirectory) {
  const auto r = cli({"gen-data", "--config", write_config(small_config()), "--out", path("a/b/c")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(path("a/b/c/dataset.json")));
}

TEST_F(CliTest, OutputDirectoryFromConfigIsRelativeToIt) {
  auto cfg = small_config();
  cfg["out"] = "nested/out";
  fs::create_directories(dir_ / "cfgdir");
  const auto r = cli({"gen-data", "--config", write_config(cfg, "cfgdir/run.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(path("cfgdir/nested/out/dataset.json")));
}

TEST_F(CliTest, GenDataRerunIsByteIdentical) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", path("x")}).code, kExitOk);
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", path("y")}).code, kExitOk);
  expect_same_tree(path("x"), path("y"));
}

TEST_F(CliTest, SeedFlagChangesDataAndIsRecorded) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", path("x")}).code, kExitOk);
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", path("y"), "--seed", "11"}).code, kExitOk);
  EXPECT_NE(read_file(path("x/traj_000.csv")), read_file(path("y/traj_000.csv")));
  const auto resolved = nlohmann::json::parse(read_file(path("y/resolved_config.json")));
  EXPECT_EQ(resolved.at("seed").get<std::uint64_t>(), 11u);
}

TEST_F(CliTest, ResolvedConfigReproducesTheRun) {
  ASSERT_EQ(cli({"gen-data", "--config", write_config(small_config()), "--out", path("x")}).code, kExitOk);
  fs::copy_file(path("x/resolved_config.json"), path("resolved.json"));
  ASSERT_EQ(cli({"gen-data", "--config", path("resolved.json"), "--out", path("y")}).code, kExitOk);
  expect_same_tree(path("x"), path("y"));
}

TEST_F(CliTest, TrainPgnnWritesCheckpointAndHistory) {
  const auto r = cli({"train", "--config", write_config(small_config()), "--out", path("m")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(path("m/model.json")));
  EXPECT_TRUE(fs::exists(path("m/model.sidecar.json")));
  const auto rows = lines(read_file(path("m/history.csv")));
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("epoch,L_error,L_phy,total", 0), 0u);
  EXPECT_EQ(rows.size(), 9u);  // header + 8 epochs
}

TEST_F(CliTest, TrainFromGeneratedDataset) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", path("data")}).code, kExitOk);
  auto with_data = small_config();
  with_data["dataset"] = "data/dataset.json";
  const auto r = cli({"train", "--config", write_config(with_data, "train.json"), "--out", path("a")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  ASSERT_EQ(cli({"train", "--config", cfg, "--out", path("b")}).code, kExitOk);
  // the dataset on disk is the one the config would generate
  EXPECT_EQ(read_file(path("a/history.csv")), read_file(path("b/history.csv")));
}

TEST_F(CliTest, TrainSindyWritesXi) {
  const auto r = cli({"train", "--config", write_config(small_config()), "--out", path("s"), "--method", "sindyc"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(read_file(path("s/model.json")));
  ASSERT_TRUE(j.contains("xi"));
  EXPECT_EQ(j.at("xi").size(), 2u);
  EXPECT_TRUE(fs::exists(path("s/lambda_selection.csv")));
}

TEST_F(CliTest, TrainNnWarnsThatLambdaIsIgnored) {
  std::vector<std::string> warnings;
  set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
  const auto r = cli({"train", "--config", write_config(small_config()), "--out", path("n"), "--method", "nn"});
  set_warning_handler(nullptr);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  bool found = false;
  for (const auto& w : warnings) found = found || w.find("lambda_phy is ignored") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST_F(CliTest, TrainDivergenceExitsThreeAndKeepsHistory) {
  auto cfg = small_config();
  cfg["experiment"]["network"]["learning_rate"] = 1e200;
  const auto r = cli({"train", "--config", write_config(cfg), "--out", path("d")});
  EXPECT_EQ(r.code, kExitDivergence);
  ASSERT_TRUE(fs::exists(path("d/history.csv")));
  EXPECT_EQ(lines(read_file(path("d/history.csv")))[0].rfind("epoch,L_error,L_phy,total", 0), 0u);
  EXPECT_FALSE(fs::exists(path("d/model.json")));
}

TEST_F(CliTest, TrainUnknownMethodIsConfigError) {
  const auto r = cli({"train", "--config", write_config(small_config()), "--out", path("u"), "--method", "gp"});
  EXPECT_EQ(r.code, kExitConfig);
}

TEST_F(CliTest, EvalWritesMetricsAndIsRepeatable) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(cli({"train", "--config", cfg, "--out", path("m")}).code, kExitOk);
  auto ev = small_config();
  ev["model"] = "m/model.json";
  // evaluate on the first training excitation
  ev["evaluation"] = {{"excitation", {{"kind", "sine"}, {"amplitude", 0.3}, {"frequency", 0.5}}},
                     {"duration", 0.5}};
  const auto evcfg = write_config(ev, "eval.json");
  const auto r = cli({"eval", "--config", evcfg, "--out", path("e1")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  ASSERT_EQ(cli({"eval", "--config", evcfg, "--out", path("e2")}).code, kExitOk);
  const auto metrics = nlohmann::json::parse(read_file(path("e1/metrics.json")));
  ASSERT_TRUE(metrics.contains("rmse"));
  EXPECT_TRUE(std::isfinite(metrics.at("rmse").get<double>()));
  EXPECT_EQ(metrics.at("method"), "pgnn-l");
  const auto rows = lines(read_file(path("e1/rollout.csv")));
  EXPECT_EQ(rows[0], "t,u,y1_ref,y2_ref,y1,y2");
  EXPECT_EQ(rows.size(), 502u);  // header + 501 samples
  expect_same_tree(path("e1"), path("e2"));
}

TEST_F(CliTest, ExperimentStillRejectsTrainingExcitationForEvaluation) {
  auto cfg = small_config();
  cfg["experiment"]["evaluation"] = {{"excitation", {{"kind", "sine"}, {"amplitude", 0.3}, {"frequency", 0.5}}}};
  EXPECT_EQ(cli({"bench", "--config", write_config(cfg), "--out", path("b")}).code, kExitConfig);
}

TEST_F(CliTest, EvalSindyModel) {
  ASSERT_EQ(cli({"train", "--config", write_config(small_config()), "--out", path("s"), "--method", "sindyc"}).code,
            kExitOk);
  auto ev = small_config();
  ev["model"] = "s/model.json";
  const auto r = cli({"eval", "--config", write_config(ev, "eval.json"), "--out", path("e")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(read_file(path("e/metrics.json"))).at("method"), "sindyc");
}

TEST_F(CliTest, EvalMissingModelExitsWithIoError) {
  auto ev = small_config();
  ev["model"] = "nowhere/model.json";
  const auto r = cli({"eval", "--config", write_config(ev), "--out", path("e")});
  EXPECT_EQ(r.code, kExitIo);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, EvalWithoutModelIsConfigError) {
  EXPECT_EQ(cli({"eval", "--config", write_config(small_config()), "--out", path("e")}).code, kExitConfig);
}

TEST_F(CliTest, BenchWritesJsonAndMarkdownReport) {
  const auto r = cli({"bench", "--config", write_config(small_config()), "--out", path("b")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = nlohmann::json::parse(read_file(path("b/report.json")));
  EXPECT_EQ(report.at("plant"), "golf");
  EXPECT_EQ(report.at("seeds").size(), 1u);
  EXPECT_NE(read_file(path("b/report.md")).find("| pgnn-l"), std::string::npos);
}

TEST_F(CliTest, BenchMethodFlagRestrictsMethods) {
  const auto r = cli({"bench", "--config", write_config(small_config()), "--out", path("b"), "--method", "prior"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = nlohmann::json::parse(read_file(path("b/report.json")));
  EXPECT_EQ(report.at("seeds")[0].at("methods").size(), 1u);
}

TEST_F(CliTest, SweepDefaultGridWritesParetoCsv) {
  const auto r = cli({"sweep-lambda", "--config", write_config(small_config()), "--out", path("p")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = lines(read_file(path("p/pareto.csv")));
  EXPECT_EQ(rows[0], "lambda_phy,L_error,L_phy,nondominated");
  EXPECT_GE(rows.size(), 11u);  // at least ten lambda values
}

TEST_F(CliTest, SearchBudgetFiveGivesFiveRecords) {
  const auto r = cli({"search", "--config", write_config(small_config()), "--out", path("s")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = lines(read_file(path("s/trials.jsonl")));
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& l : rows) EXPECT_TRUE(nlohmann::json::parse(l).contains("config"));
  EXPECT_TRUE(fs::exists(path("s/best.json")));
}

TEST_F(CliTest, UnknownConfigKeyIsRejected) {
  auto cfg = small_config();
  cfg["learning_rate"] = 0.1;
  const auto r = cli({"gen-data", "--config", write_config(cfg), "--out", path("x")});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST_F(CliTest, UnknownNestedKeyIsRejected) {
  auto cfg = small_config();
  cfg["experiment"]["network"]["dropout"] = 0.1;
  EXPECT_EQ(cli({"gen-data", "--config", write_config(cfg), "--out", path("x")}).code, kExitConfig);
}

TEST_F(CliTest, MalformedJsonIsConfigError) {
  write_file_atomic(dir_ / "bad.json", "{\"seed\": ");
  EXPECT_EQ(cli({"gen-data", "--config", path("bad.json"), "--out", path("x")}).code, kExitConfig);
}

TEST_F(CliTest, MissingConfigFileIsIoError) {
  EXPECT_EQ(cli({"gen-data", "--config", path("absent.json"), "--out", path("x")}).code, kExitIo);
}

TEST_F(CliTest, BadCommandLineIsConfigError) {
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({"gen-data", "--seed", "minus-one"}).code, kExitConfig);
}

TEST_F(CliTest, HelpExitsZero) {
  const auto r = cli({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("sweep-lambda"), std::string::npos);
}
