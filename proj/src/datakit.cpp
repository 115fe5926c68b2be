#include "pgnnl/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"
#include "pgnnl/random.hpp"

namespace pgnnl {

void Excitation::validate() const {
  if (!std::isfinite(amplitude) || !std::isfinite(offset) || !std::isfinite(start))
    throw ConfigError("excitation: amplitude, offset and start must be finite");
  if (kind == ExcitationKind::Sine && !(frequency >= 0)) throw ConfigError("excitation: sine frequency must be >= 0");
  if (kind == ExcitationKind::Chirp && !(f1 >= f0 && f0 >= 0))
    throw ConfigError("excitation: chirp needs f1 >= f0 >= 0");
  if (!(sweep_time >= 0)) throw ConfigError("excitation: sweep_time must be >= 0");
}

Excitation Excitation::step(double amplitude, double start, double offset) {
  Excitation e;
  e.kind = ExcitationKind::Step;
  e.amplitude = amplitude;
  e.start = start;
  e.offset = offset;
  return e;
}

Excitation Excitation::sine(double amplitude, double frequency, double offset, double start) {
  Excitation e;
  e.kind = ExcitationKind::Sine;
  e.amplitude = amplitude;
  e.frequency = frequency;
  e.offset = offset;
  e.start = start;
  return e;
}

Excitation Excitation::chirp(double amplitude, double f0, double f1, double offset, double start) {
  Excitation e;
  e.kind = ExcitationKind::Chirp;
  e.amplitude = amplitude;
  e.f0 = f0;
  e.f1 = f1;
  e.offset = offset;
  e.start = start;
  return e;
}

namespace {

// Phase of a linear frequency sweep; a sine is the rate = 0 case.
double sweep_phase(double f0, double rate, double tau) { return 2.0 * M_PI * (f0 * tau + 0.5 * rate * tau * tau); }

}  // namespace

std::vector<double> generate_signal(const Excitation& e, double dt, int n_steps) {
  e.validate();
  if (!(dt > 0)) throw ConfigError("generate_signal: dt must be positive");
  if (n_steps < 0) throw ConfigError("generate_signal: n_steps must be >= 0");
  const double sweep = e.sweep_time > 0 ? e.sweep_time : std::max(n_steps * dt - e.start, dt);
  const double rate = (e.f1 - e.f0) / sweep;
  std::vector<double> out(static_cast<std::size_t>(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) {
    const double t = k * dt;
    // Half-sample tolerance so a start time on the grid switches exactly there.
    if (t < e.start - 1e-9 * dt) {
      out[k] = 0.0;
      continue;
    }
    const double tau = t - e.start;
    double shape = 1.0;
    switch (e.kind) {
      case ExcitationKind::Step: shape = 1.0; break;
      case ExcitationKind::Sine: shape = std::sin(sweep_phase(e.frequency, 0.0, tau)); break;
      case ExcitationKind::Chirp: {
        const double tc = std::min(tau, sweep);
        double phase = sweep_phase(e.f0, rate, tc);
        if (tau > sweep) phase += 2.0 * M_PI * e.f1 * (tau - sweep);
        shape = std::sin(phase);
        break;
      }
    }
    out[k] = e.offset + e.amplitude * shape;
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw IoError("unknown split tag '" + s + "'");
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& v) const {
  if (v.cols() != channels()) throw ShapeError("standardizer: channel count mismatch");
  return ((v.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
}

Eigen::MatrixXd Standardizer::invert(const Eigen::MatrixXd& z) const {
  if (z.cols() != channels()) throw ShapeError("standardizer: channel count mismatch");
  return ((z.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array()).matrix();
}

Eigen::RowVectorXd Standardizer::apply_row(const Eigen::RowVectorXd& v) const {
  return ((v - mean.transpose()).array() / std.transpose().array()).matrix();
}

Eigen::RowVectorXd Standardizer::invert_row(const Eigen::RowVectorXd& z) const {
  return (z.array() * std.transpose().array()).matrix() + mean.transpose();
}

Standardizer Standardizer::identity(Eigen::Index channels) {
  return {Eigen::VectorXd::Zero(channels), Eigen::VectorXd::Ones(channels)};
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& v) {
  if (v.rows() == 0) throw ShapeError("standardizer: no samples to fit");
  Standardizer s;
  s.mean = v.colwise().mean().transpose();
  s.std.resize(v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    const double var = (v.col(c).array() - s.mean(c)).square().mean();
    double sd = std::sqrt(var);
    if (!(sd > 0) || !std::isfinite(sd)) {
      warn("standardizer: channel " + std::to_string(c) + " is constant; using std = 1");
      sd = 1.0;
    }
    s.std(c) = sd;
  }
  return s;
}

void to_json(nlohmann::json& j, const Standardizer& s) {
  j = {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
       {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
  require_keys_subset(j, {"mean", "std"}, "standardizer");
  const auto mean = read_required<std::vector<double>>(j, "mean", "standardizer");
  const auto sd = read_required<std::vector<double>>(j, "std", "standardizer");
  if (mean.size() != sd.size()) throw ConfigError("standardizer: mean/std length mismatch");
  s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> Dataset::trajectory_ranges() const {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  Eigen::Index begin = 0;
  for (Eigen::Index k = 1; k <= size(); ++k) {
    if (k == size() || traj_id[k] != traj_id[k - 1]) {
      out.emplace_back(begin, k);
      begin = k;
    }
  }
  return out;
}

int Dataset::trajectory_count() const { return static_cast<int>(trajectory_ranges().size()); }

std::vector<Eigen::Index> Dataset::indices_of(Split s) const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index k = 0; k < size(); ++k)
    if (split[k] == s) out.push_back(k);
  return out;
}

void Dataset::validate() const {
  const auto n = size();
  if (u.rows() != n || y.rows() != n || static_cast<Eigen::Index>(traj_id.size()) != n ||
      static_cast<Eigen::Index>(split.size()) != n)
    throw ShapeError("dataset: column lengths disagree");
  if (n > 0 && !(dt > 0)) throw ShapeError("dataset: dt must be positive");
}

Dataset dataset_from_trajectory(const Trajectory& traj) {
  traj.validate();
  Dataset d;
  d.dt = traj.dt;
  d.t = traj.t;
  d.u = traj.u;
  d.y = traj.x;
  d.traj_id.assign(static_cast<std::size_t>(traj.size()), 0);
  d.split.assign(static_cast<std::size_t>(traj.size()), Split::Train);
  return d;
}

Dataset simulate_measurement(const PlantModel& true_plant, const Excitation& e, double dt, int n_steps,
                             std::span<const double> noise_std, std::uint64_t seed, const Eigen::VectorXd& x0,
                             const IntegratorOptions& opts) {
  if (static_cast<int>(noise_std.size()) != true_plant.state_dim())
    throw ConfigError("simulate_measurement: need one noise std per output channel");
  for (double s : noise_std)
    if (!(s >= 0) || !std::isfinite(s)) throw ConfigError("simulate_measurement: noise std must be >= 0");
  const auto u = generate_signal(e, dt, n_steps);
  const Eigen::VectorXd start = x0.size() == 0 ? Eigen::VectorXd::Zero(true_plant.state_dim()) : x0;
  Dataset d = dataset_from_trajectory(integrate(true_plant, start, std::span<const double>(u), dt, n_steps, opts));
  Rng rng(seed);
  for (Eigen::Index k = 0; k < d.size(); ++k)
    for (Eigen::Index c = 0; c < d.output_dim(); ++c)
      if (noise_std[c] > 0) d.y(k, c) += noise_std[c] * standard_normal(rng);
  d.seed = seed;
  d.noise_std.assign(noise_std.begin(), noise_std.end());
  return d;
}

Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) return {};
  Eigen::Index n = 0;
  for (const auto& p : parts) {
    p.validate();
    if (std::abs(p.dt - parts[0].dt) > 1e-12 * parts[0].dt) throw ShapeError("concat: mixed dt across trajectories");
    if (p.input_dim() != parts[0].input_dim() || p.output_dim() != parts[0].output_dim())
      throw ShapeError("concat: channel counts differ");
    n += p.size();
  }
  Dataset d;
  d.dt = parts[0].dt;
  d.seed = parts[0].seed;
  d.noise_std = parts[0].noise_std;
  d.t.resize(n);
  d.u.resize(n, parts[0].input_dim());
  d.y.resize(n, parts[0].output_dim());
  Eigen::Index row = 0;
  int next_id = 0;
  for (const auto& p : parts) {
    d.t.segment(row, p.size()) = p.t;
    d.u.middleRows(row, p.size()) = p.u;
    d.y.middleRows(row, p.size()) = p.y;
    d.split.insert(d.split.end(), p.split.begin(), p.split.end());
    int last = -1;
    int id = next_id - 1;
    for (int tid : p.traj_id) {
      if (tid != last) {
        ++id;
        last = tid;
      }
      d.traj_id.push_back(id);
    }
    next_id = id + 1;
    row += p.size();
  }
  return d;
}

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "contiguous") return SplitMode::Contiguous;
  if (s == "by_trajectory") return SplitMode::ByTrajectory;
  throw ConfigError("unknown split mode '" + s + "'");
}

namespace {

struct SplitCounts {
  Eigen::Index train, val, test;
};

SplitCounts counts_60_20_20(Eigen::Index n) {
  const Eigen::Index val = n / 5;
  const Eigen::Index test = n / 5;
  return {n - val - test, val, test};
}

}  // namespace

Dataset split_60_20_20(const Dataset& d, SplitMode mode, std::uint64_t seed) {
  d.validate();
  if (d.size() < 5) throw ConfigError("split: need at least 5 records, got " + std::to_string(d.size()));
  Dataset out = d;
  const auto ranges = d.trajectory_ranges();
  if (mode == SplitMode::Contiguous) {
    for (const auto& [b, e] : ranges) {
      const auto c = counts_60_20_20(e - b);
      for (Eigen::Index k = b; k < e; ++k) {
        const Eigen::Index i = k - b;
        out.split[k] = i < c.train ? Split::Train : (i < c.train + c.val ? Split::Val : Split::Test);
      }
    }
  } else {
    std::vector<std::size_t> order(ranges.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    shuffle_in_place(order, rng);
    const auto c = counts_60_20_20(static_cast<Eigen::Index>(ranges.size()));
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const auto i = static_cast<Eigen::Index>(pos);
      const Split tag = i < c.train ? Split::Train : (i < c.train + c.val ? Split::Val : Split::Test);
      const auto [b, e] = ranges[order[pos]];
      for (Eigen::Index k = b; k < e; ++k) out.split[k] = tag;
    }
  }
  return out;
}

Standardizer fit_standardizer(const Dataset& d, ChannelSet channels) {
  const auto rows = d.indices_of(Split::Train);
  if (rows.empty()) throw ConfigError("fit_standardizer: no train-tagged records");
  const Eigen::MatrixXd& src = channels == ChannelSet::Inputs ? d.u : d.y;
  return Standardizer::fit(src(rows, Eigen::all));
}

Dataset smooth_outputs(const Dataset& d, int window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("smooth_outputs: window must be odd and >= 1");
  Dataset out = d;
  const Eigen::Index h = window / 2;
  for (const auto& [b, e] : d.trajectory_ranges()) {
    for (Eigen::Index k = b; k < e; ++k) {
      const Eigen::Index r = std::min({h, k - b, e - 1 - k});
      out.y.row(k) = d.y.middleRows(k - r, 2 * r + 1).colwise().mean();
    }
  }
  return out;
}

Dataset slice(const Dataset& d, Eigen::Index begin, Eigen::Index end) {
  if (begin < 0 || end > d.size() || begin >= end) throw ShapeError("slice: bad record range");
  Dataset out;
  out.dt = d.dt;
  out.seed = d.seed;
  out.noise_std = d.noise_std;
  out.t = d.t.segment(begin, end - begin);
  out.u = d.u.middleRows(begin, end - begin);
  out.y = d.y.middleRows(begin, end - begin);
  out.traj_id.assign(d.traj_id.begin() + begin, d.traj_id.begin() + end);
  out.split.assign(d.split.begin() + begin, d.split.begin() + end);
  return out;
}

Dataset leading_fraction(const Dataset& d, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("leading_fraction: fraction must be in (0, 1]");
  std::vector<Dataset> parts;
  for (const auto& [b, e] : d.trajectory_ranges()) {
    const auto n = e - b;
    const auto keep = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(std::ceil(fraction * n - 1e-9)));
    parts.push_back(slice(d, b, b + std::max<Eigen::Index>(keep, 1)));
  }
  Dataset out = concat(parts);
  std::fill(out.split.begin(), out.split.end(), Split::Train);
  return out;
}

SnapshotMatrices build_snapshots(const Dataset& d, std::optional<Split> only) {
  d.validate();
  if (d.empty()) throw ShapeError("build_snapshots: empty dataset");
  std::vector<Eigen::Index> cols;
  for (const auto& [b, e] : d.trajectory_ranges()) {
    for (Eigen::Index k = b + 1; k < e; ++k) {
      const double step = d.t(k) - d.t(k - 1);
      if (std::abs(step - d.dt) > 1e-9 * d.dt)
        throw ShapeError("build_snapshots: mixed dt (record " + std::to_string(k) + ")");
    }
    for (Eigen::Index k = b; k + 1 < e; ++k) {
      if (only && (d.split[k] != *only || d.split[k + 1] != *only)) continue;
      cols.push_back(k);
    }
  }
  if (cols.empty()) throw ShapeError("build_snapshots: no snapshot pairs");
  SnapshotMatrices s;
  const auto p = static_cast<Eigen::Index>(cols.size());
  s.Y.resize(d.output_dim(), p);
  s.Yp.resize(d.output_dim(), p);
  s.U.resize(d.input_dim(), p);
  for (Eigen::Index j = 0; j < p; ++j) {
    s.Y.col(j) = d.y.row(cols[j]).transpose();
    s.Yp.col(j) = d.y.row(cols[j] + 1).transpose();
    s.U.col(j) = d.u.row(cols[j]).transpose();
  }
  s.source = std::move(cols);
  return s;
}

std::string dataset_to_csv(const Dataset& d) {
  d.validate();
  std::string out = "t";
  if (d.input_dim() == 1) out += ",u";
  else
    for (Eigen::Index c = 0; c < d.input_dim(); ++c) out += ",u" + std::to_string(c + 1);
  for (Eigen::Index c = 0; c < d.output_dim(); ++c) out += ",y" + std::to_string(c + 1);
  out += ",split,traj_id\n";
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    out += format_double(d.t(k));
    for (Eigen::Index c = 0; c < d.input_dim(); ++c) out += "," + format_double(d.u(k, c));
    for (Eigen::Index c = 0; c < d.output_dim(); ++c) out += "," + format_double(d.y(k, c));
    out += "," + to_string(d.split[k]) + "," + std::to_string(d.traj_id[k]) + "\n";
  }
  return out;
}

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw IoError("dataset csv: empty file");
  std::vector<std::string> names;
  {
    std::istringstream hs(header);
    std::string cell;
    while (std::getline(hs, cell, ',')) names.push_back(cell);
  }
  if (names.size() < 4 || names.front() != "t" || names[names.size() - 2] != "split" || names.back() != "traj_id")
    throw IoError("dataset csv: bad header '" + header + "'");
  Eigen::Index m = 0, l = 0;
  for (std::size_t i = 1; i + 2 < names.size(); ++i) (names[i][0] == 'u' ? m : l) += 1;
  std::vector<std::vector<double>> num;
  std::vector<Split> split;
  std::vector<int> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != names.size()) throw IoError("dataset csv: ragged row");
    std::vector<double> row;
    for (std::size_t i = 0; i + 2 < cells.size(); ++i) row.push_back(std::stod(cells[i]));
    num.push_back(std::move(row));
    split.push_back(split_from_string(cells[cells.size() - 2]));
    ids.push_back(std::stoi(cells.back()));
  }
  Dataset d;
  const auto n = static_cast<Eigen::Index>(num.size());
  d.t.resize(n);
  d.u.resize(n, m);
  d.y.resize(n, l);
  for (Eigen::Index k = 0; k < n; ++k) {
    d.t(k) = num[k][0];
    for (Eigen::Index c = 0; c < m; ++c) d.u(k, c) = num[k][1 + c];
    for (Eigen::Index c = 0; c < l; ++c) d.y(k, c) = num[k][1 + m + c];
  }
  d.split = std::move(split);
  d.traj_id = std::move(ids);
  d.dt = n > 1 ? d.t(1) - d.t(0) : 0.0;
  return d;
}

nlohmann::json dataset_sidecar(const Dataset& d) {
  nlohmann::json j = {{"dt", d.dt},
                      {"seed", d.seed},
                      {"noise_std", d.noise_std},
                      {"records", d.size()},
                      {"trajectories", d.trajectory_count()}};
  j["input_stats"] = d.input_stats ? nlohmann::json(*d.input_stats) : nlohmann::json(nullptr);
  j["output_stats"] = d.output_stats ? nlohmann::json(*d.output_stats) : nlohmann::json(nullptr);
  return j;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  nlohmann::json side = dataset_sidecar(d);
  std::vector<std::string> files;
  int index = 0;
  for (const auto& [b, e] : d.trajectory_ranges()) {
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%03d.csv", index++);
    write_file_atomic(dir / name, dataset_to_csv(slice(d, b, e)));
    files.emplace_back(name);
  }
  side["files"] = files;
  write_file_atomic(dir / "dataset.json", side.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& sidecar) {
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(sidecar));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("dataset sidecar " + sidecar.string() + ": " + e.what());
  }
  require_keys_subset(side, {"dt", "seed", "noise_std", "records", "trajectories", "input_stats", "output_stats", "files"},
                      "dataset sidecar");
  std::vector<Dataset> parts;
  for (const auto& f : read_required<std::vector<std::string>>(side, "files", "dataset sidecar"))
    parts.push_back(dataset_from_csv(read_file(sidecar.parent_path() / f)));
  Dataset d = concat(parts);
  d.dt = read_required<double>(side, "dt", "dataset sidecar");
  d.seed = side.value("seed", std::uint64_t{0});
  read_optional(side, "noise_std", d.noise_std, "dataset sidecar");
  if (side.contains("input_stats") && !side["input_stats"].is_null()) d.input_stats = side["input_stats"].get<Standardizer>();
  if (side.contains("output_stats") && !side["output_stats"].is_null())
    d.output_stats = side["output_stats"].get<Standardizer>();
  return d;
}

void to_json(nlohmann::json& j, const Excitation& e) {
  switch (e.kind) {
    case ExcitationKind::Step:
      j = {{"kind", "step"}, {"amplitude", e.amplitude}, {"offset", e.offset}, {"start", e.start}};
      break;
    case ExcitationKind::Sine:
      j = {{"kind", "sine"}, {"amplitude", e.amplitude}, {"frequency", e.frequency}, {"offset", e.offset}, {"start", e.start}};
      break;
    case ExcitationKind::Chirp:
      j = {{"kind", "chirp"}, {"amplitude", e.amplitude}, {"f0", e.f0}, {"f1", e.f1},
           {"offset", e.offset}, {"start", e.start}, {"sweep_time", e.sweep_time}};
      break;
  }
}

void from_json(const nlohmann::json& j, Excitation& e) {
  require_keys_subset(j, {"kind", "amplitude", "frequency", "f0", "f1", "offset", "start", "sweep_time"}, "excitation");
  const auto kind = read_required<std::string>(j, "kind", "excitation");
  if (kind == "step") e.kind = ExcitationKind::Step;
  else if (kind == "sine") e.kind = ExcitationKind::Sine;
  else if (kind == "chirp") e.kind = ExcitationKind::Chirp;
  else throw ConfigError("excitation: unknown kind '" + kind + "'");
  read_optional(j, "amplitude", e.amplitude, "excitation");
  read_optional(j, "frequency", e.frequency, "excitation");
  read_optional(j, "f0", e.f0, "excitation");
  read_optional(j, "f1", e.f1, "excitation");
  read_optional(j, "offset", e.offset, "excitation");
  read_optional(j, "start", e.start, "excitation");
  read_optional(j, "sweep_time", e.sweep_time, "excitation");
  e.validate();
}

}  // namespace pgnnl
