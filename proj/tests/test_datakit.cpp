#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "pgnnl/datakit.hpp"
#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"

namespace pgnnl {
namespace {

Dataset ramp_dataset(std::vector<int> lengths, double dt = 0.1) {
  std::vector<Dataset> parts;
  double value = 0;
  for (int n : lengths) {
    Dataset d;
    d.dt = dt;
    d.t = Eigen::VectorXd::LinSpaced(n, 0.0, (n - 1) * dt);
    d.u = Eigen::MatrixXd::Zero(n, 1);
    d.y = Eigen::MatrixXd::Zero(n, 2);
    for (int k = 0; k < n; ++k) {
      d.u(k, 0) = k;
      d.y(k, 0) = value;
      d.y(k, 1) = -value;
      value += 1;
    }
    d.traj_id.assign(n, 0);
    d.split.assign(n, Split::Train);
    parts.push_back(d);
  }
  return concat(parts);
}

TEST(GenerateSignal, StepSwitchesAtStart) {
  const auto u = generate_signal(Excitation::step(5.0, 1.0), 5e-4, 4000);
  ASSERT_EQ(u.size(), 4001u);
  for (int k = 0; k <= 4000; ++k) EXPECT_EQ(u[k], k < 2000 ? 0.0 : 5.0) << "k=" << k;
}

TEST(GenerateSignal, ZeroAmplitudeSineIsZero) {
  for (double v : generate_signal(Excitation::sine(0.0, 3.0), 1e-3, 500)) EXPECT_EQ(v, 0.0);
}

TEST(GenerateSignal, DegenerateChirpEqualsSine) {
  const auto s = generate_signal(Excitation::sine(0.7, 2.5, 0.1, 0.2), 1e-3, 3000);
  const auto c = generate_signal(Excitation::chirp(0.7, 2.5, 2.5, 0.1, 0.2), 1e-3, 3000);
  EXPECT_EQ(s, c);
}

TEST(GenerateSignal, ChirpSweepsUpward) {
  // Count zero crossings in the first and last second of a 0.5 -> 5 Hz sweep.
  const double dt = 1e-3;
  const auto c = generate_signal(Excitation::chirp(1.0, 0.5, 5.0), dt, 10000);
  auto crossings = [&](int from, int to) {
    int n = 0;
    for (int k = from + 1; k < to; ++k) n += (c[k - 1] < 0) != (c[k] < 0);
    return n;
  };
  EXPECT_LT(crossings(0, 1000), 3);
  EXPECT_GT(crossings(9000, 10000), 8);
}

TEST(GenerateSignal, InvalidChirpRejected) {
  EXPECT_THROW(generate_signal(Excitation::chirp(1.0, 3.0, 1.0), 1e-3, 10), ConfigError);
  EXPECT_THROW(generate_signal(Excitation::step(1.0, 0.0), 0.0, 10), ConfigError);
}

TEST(SimulateMeasurement, NoiseFreeEqualsCleanTrajectory) {
  const auto plant = PlantModel::golf(GolfParams{});
  const std::vector<double> zero{0.0, 0.0};
  const auto d = simulate_measurement(plant, Excitation::sine(0.3, 0.5), 1e-3, 2000, zero, 1);
  const auto u = generate_signal(Excitation::sine(0.3, 0.5), 1e-3, 2000);
  const auto clean = integrate(plant, Eigen::Vector2d::Zero(), std::span<const double>(u), 1e-3, 2000);
  EXPECT_EQ(d.y, clean.x);
  EXPECT_EQ(d.u.col(0), clean.u);
}

TEST(SimulateMeasurement, SeededRunsAreIdentical) {
  const auto plant = PlantModel::golf(GolfParams{});
  const std::vector<double> noise{1e-3, 1e-2};
  const auto a = simulate_measurement(plant, Excitation::step(0.2, 0.1), 1e-3, 500, noise, 42);
  const auto b = simulate_measurement(plant, Excitation::step(0.2, 0.1), 1e-3, 500, noise, 42);
  const auto c = simulate_measurement(plant, Excitation::step(0.2, 0.1), 1e-3, 500, noise, 43);
  EXPECT_EQ(dataset_to_csv(a), dataset_to_csv(b));
  EXPECT_NE(dataset_to_csv(a), dataset_to_csv(c));
}

TEST(SimulateMeasurement, EmpiricalNoiseStd) {
  PlantModel still("still", 2, [](const Eigen::VectorXd& x, double, double) {
    return Eigen::VectorXd::Zero(x.size()).eval();
  });
  const std::vector<double> noise{1e-3, 1e-2};
  const auto d = simulate_measurement(still, Excitation::step(0.0, 0.0), 1e-3, 99999, noise, 5);
  ASSERT_EQ(d.size(), 100000);
  for (int c = 0; c < 2; ++c) {
    const double mean = d.y.col(c).mean();
    const double sd = std::sqrt((d.y.col(c).array() - mean).square().mean());
    EXPECT_NEAR(sd / noise[c], 1.0, 0.05);
    EXPECT_NEAR(mean, 0.0, 5 * noise[c] / std::sqrt(1e5));
  }
}

TEST(Split, ContiguousTenRecords) {
  const auto d = split_60_20_20(ramp_dataset({10}), SplitMode::Contiguous, 0);
  EXPECT_EQ(d.indices_of(Split::Train).size(), 6u);
  EXPECT_EQ(d.indices_of(Split::Val).size(), 2u);
  EXPECT_EQ(d.indices_of(Split::Test).size(), 2u);
  EXPECT_EQ(d.split[5], Split::Train);
  EXPECT_EQ(d.split[6], Split::Val);
  EXPECT_EQ(d.split[8], Split::Test);
}

TEST(Split, ByTrajectoryCountsAndPinnedAssignment) {
  const auto d = split_60_20_20(ramp_dataset({5, 6, 7, 8, 9, 10}), SplitMode::ByTrajectory, 2024);
  std::vector<Split> per_traj;
  for (const auto& [b, e] : d.trajectory_ranges()) {
    for (auto k = b; k < e; ++k) ASSERT_EQ(d.split[k], d.split[b]);
    per_traj.push_back(d.split[b]);
  }
  EXPECT_EQ(std::count(per_traj.begin(), per_traj.end(), Split::Train), 4);
  EXPECT_EQ(std::count(per_traj.begin(), per_traj.end(), Split::Val), 1);
  EXPECT_EQ(std::count(per_traj.begin(), per_traj.end(), Split::Test), 1);
  // Frozen from the first run with seed 2024.
  const std::vector<Split> pinned{Split::Train, Split::Train, Split::Train, Split::Train, Split::Test, Split::Val};
  EXPECT_EQ(per_traj, pinned);
  const auto again = split_60_20_20(ramp_dataset({5, 6, 7, 8, 9, 10}), SplitMode::ByTrajectory, 2024);
  EXPECT_EQ(again.split, d.split);
}

TEST(Split, TagsPartitionIndexSet) {
  const auto d = split_60_20_20(ramp_dataset({100}), SplitMode::Contiguous, 0);
  std::vector<int> hits(100, 0);
  for (Split s : {Split::Train, Split::Val, Split::Test})
    for (auto k : d.indices_of(s)) hits[k]++;
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Split, TooFewRecords) { EXPECT_THROW(split_60_20_20(ramp_dataset({4}), SplitMode::Contiguous, 0), ConfigError); }

TEST(Standardizer, MapsMeanAndStd) {
  Eigen::MatrixXd v(2, 1);
  v << 1.0, 5.0;  // mean 3, population std 2
  const auto s = Standardizer::fit(v);
  EXPECT_DOUBLE_EQ(s.mean(0), 3.0);
  EXPECT_DOUBLE_EQ(s.std(0), 2.0);
  Eigen::MatrixXd five(1, 1);
  five << 5.0;
  EXPECT_DOUBLE_EQ(s.apply(five)(0, 0), 1.0);
}

TEST(Standardizer, RoundTrip) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(2.0, 7.0);
  Eigen::MatrixXd v(200, 3);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
  const auto s = Standardizer::fit(v);
  const Eigen::MatrixXd back = s.invert(s.apply(v));
  EXPECT_LT(((back - v).array().abs() / v.array().abs().max(1.0)).maxCoeff(), 1e-12);
}

TEST(Standardizer, ConstantChannelWarnsAndUsesUnitStd) {
  std::vector<std::string> warnings;
  set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
  const auto s = Standardizer::fit(Eigen::MatrixXd::Constant(10, 1, 4.0));
  set_warning_handler(nullptr);
  EXPECT_EQ(s.std(0), 1.0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Standardizer, FitIgnoresValAndTestRecords) {
  auto d = split_60_20_20(ramp_dataset({20, 20}), SplitMode::Contiguous, 0);
  const auto before = fit_standardizer(d, ChannelSet::Outputs);
  for (auto k : d.indices_of(Split::Test)) d.y.row(k) *= 1000.0;
  for (auto k : d.indices_of(Split::Val)) d.y.row(k).setConstant(-5.0);
  const auto after = fit_standardizer(d, ChannelSet::Outputs);
  EXPECT_EQ(before.mean, after.mean);
  EXPECT_EQ(before.std, after.std);
}

TEST(Snapshots, ThreeSamples) {
  const auto s = build_snapshots(ramp_dataset({3}));
  ASSERT_EQ(s.cols(), 2);
  EXPECT_EQ(s.Y(0, 0), 0.0);
  EXPECT_EQ(s.Yp(0, 1), 2.0);
  EXPECT_EQ(s.U(0, 1), 1.0);
}

TEST(Snapshots, PairsNeverCrossTrajectories) {
  const auto d = ramp_dataset({5, 4});
  const auto s = build_snapshots(d);
  ASSERT_EQ(s.cols(), 7);
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const auto k = s.source[j];
    EXPECT_EQ(d.traj_id[k], d.traj_id[k + 1]);
    EXPECT_EQ(s.Yp.col(j), d.y.row(k + 1).transpose());
    EXPECT_EQ(s.Y.col(j), d.y.row(k).transpose());
  }
  EXPECT_EQ(std::count(s.source.begin(), s.source.end(), 4), 0);  // last record of the first trajectory
}

TEST(Snapshots, SplitFilterKeepsOnlyTrainPairs) {
  const auto d = split_60_20_20(ramp_dataset({10}), SplitMode::Contiguous, 0);
  EXPECT_EQ(build_snapshots(d, Split::Train).cols(), 5);
}

TEST(Snapshots, Errors) {
  EXPECT_THROW(build_snapshots(Dataset{}), ShapeError);
  auto d = ramp_dataset({6});
  d.t(3) += 0.05;
  EXPECT_THROW(build_snapshots(d), ShapeError);
  EXPECT_THROW(concat(std::vector<Dataset>{ramp_dataset({5}, 0.1), ramp_dataset({5}, 0.2)}), ShapeError);
}

TEST(LeadingFraction, KeepsPrefixOfEachTrajectory) {
  const auto d = leading_fraction(ramp_dataset({20, 40}), 0.15);
  const auto ranges = d.trajectory_ranges();
  ASSERT_EQ(ranges.size(), 2u);
  EXPECT_EQ(ranges[0].second - ranges[0].first, 3);
  EXPECT_EQ(ranges[1].second - ranges[1].first, 6);
  EXPECT_EQ(d.y(3, 0), 20.0);
  const auto full = ramp_dataset({20, 40});
  EXPECT_EQ(leading_fraction(full, 1.0).y, full.y);
}

TEST(DatasetFiles, WriteAndReadBack) {
  const auto dir = std::filesystem::temp_directory_path() / "pgnnl_test_dataset";
  std::filesystem::remove_all(dir);
  auto d = split_60_20_20(ramp_dataset({7, 9, 8}), SplitMode::Contiguous, 0);
  d.output_stats = fit_standardizer(d, ChannelSet::Outputs);
  write_dataset(dir, d);
  EXPECT_TRUE(std::filesystem::exists(dir / "traj_002.csv"));
  const auto back = read_dataset(dir / "dataset.json");
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(back.split, d.split);
  EXPECT_EQ(back.traj_id, d.traj_id);
  EXPECT_EQ(back.output_stats->mean, d.output_stats->mean);
  const std::string csv = read_file(dir / "traj_000.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,u,y1,y2,split,traj_id");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace pgnnl
