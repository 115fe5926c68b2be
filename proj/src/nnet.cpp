#include "pgnnl/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/json_util.hpp"
#include "pgnnl/random.hpp"

namespace pgnnl {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

int Mlp::neuron_count() const {
  return std::accumulate(layer_sizes.begin() + 1, layer_sizes.end(), 0);
}

Eigen::Index Mlp::parameter_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

bool Mlp::all_finite() const {
  for (int l = 0; l < layers(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

void Mlp::validate() const {
  if (layer_sizes.size() < 2) throw ShapeError("mlp: need at least input and output sizes");
  if (static_cast<int>(weights.size()) != static_cast<int>(layer_sizes.size()) - 1 || biases.size() != weights.size())
    throw ShapeError("mlp: layer count mismatch");
  if (activations.size() + 1 != weights.size()) throw ShapeError("mlp: need one activation per hidden layer");
  for (int l = 0; l < layers(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1])
      throw ShapeError("mlp: parameter shape mismatch in layer " + std::to_string(l));
  }
}

Mlp init_mlp(const std::vector<int>& layer_sizes, const std::vector<Activation>& activations, std::uint64_t seed) {
  if (layer_sizes.size() < 3) throw ConfigError("init_mlp: need at least one hidden layer");
  for (int s : layer_sizes)
    if (s <= 0) throw ConfigError("init_mlp: layer sizes must be positive");
  const std::size_t hidden = layer_sizes.size() - 2;
  if (activations.size() != hidden && activations.size() != 1)
    throw ConfigError("init_mlp: give one activation or one per hidden layer");

  Mlp net;
  net.layer_sizes = layer_sizes;
  net.activations = activations.size() == hidden ? activations : std::vector<Activation>(hidden, activations[0]);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return net;
}

namespace {

void activate(Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::Tanh) z = z.array().tanh().matrix();
  else z = z.cwiseMax(0.0);
}

// Derivative expressed through the activation output.
Eigen::ArrayXXd activation_slope(const Eigen::MatrixXd& out, Activation a) {
  if (a == Activation::Tanh) return 1.0 - out.array().square();
  return (out.array() > 0.0).cast<double>();
}

void check_input(const Mlp& net, const Eigen::MatrixXd& batch) {
  if (batch.cols() != net.input_dim())
    throw ShapeError("mlp: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(net.input_dim()));
}

// Layer outputs a_0 = batch, ..., a_L = prediction.
std::vector<Eigen::MatrixXd> forward_all(const Mlp& net, const Eigen::MatrixXd& batch) {
  check_input(net, batch);
  std::vector<Eigen::MatrixXd> a;
  a.reserve(net.layers() + 1);
  a.push_back(batch);
  for (int l = 0; l < net.layers(); ++l) {
    Eigen::MatrixXd z = a.back() * net.weights[l].transpose();
    z.rowwise() += net.biases[l].transpose();
    if (l + 1 < net.layers()) activate(z, net.activations[l]);
    a.push_back(std::move(z));
  }
  return a;
}

MlpGradients backward_from(const Mlp& net, const std::vector<Eigen::MatrixXd>& a, const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != a.back().rows() || upstream.cols() != a.back().cols())
    throw ShapeError("backward: upstream gradient shape differs from the network output");
  MlpGradients g;
  g.weights.resize(net.layers());
  g.biases.resize(net.layers());
  Eigen::MatrixXd delta = upstream;  // d loss / d z_l
  for (int l = net.layers() - 1; l >= 0; --l) {
    g.weights[l].noalias() = delta.transpose() * a[l];
    g.biases[l] = delta.colwise().sum().transpose();
    Eigen::MatrixXd back = delta * net.weights[l];
    if (l > 0) back.array() *= activation_slope(a[l], net.activations[l - 1]);
    delta = std::move(back);
  }
  g.input = std::move(delta);
  return g;
}

}  // namespace

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& batch) { return forward_all(net, batch).back(); }

MlpGradients backward(const Mlp& net, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream) {
  return backward_from(net, forward_all(net, batch), upstream);
}

void adam_step(Mlp& net, const MlpGradients& grads, AdamState& state) {
  if (static_cast<int>(grads.weights.size()) != net.layers() || grads.biases.size() != grads.weights.size())
    throw ShapeError("adam_step: gradient layer count mismatch");
  for (int l = 0; l < net.layers(); ++l) {
    if (grads.weights[l].rows() != net.weights[l].rows() || grads.weights[l].cols() != net.weights[l].cols() ||
        grads.biases[l].size() != net.biases[l].size())
      throw ShapeError("adam_step: gradient shape mismatch in layer " + std::to_string(l));
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
      throw DivergenceError("adam_step: non-finite gradient in layer " + std::to_string(l), state.step + 1);
  }
  if (state.m_weights.empty()) {
    for (int l = 0; l < net.layers(); ++l) {
      state.m_weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      state.v_weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      state.m_biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
      state.v_biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double b1 = state.beta1, b2 = state.beta2, lr = state.learning_rate, eps = state.epsilon;
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v.array() = b2 * v.array() + (1.0 - b2) * grad.array().square();
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (int l = 0; l < net.layers(); ++l) {
    update(net.weights[l], grads.weights[l], state.m_weights[l], state.v_weights[l]);
    update(net.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l]);
  }
}

double mse(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw ShapeError("mse: shape mismatch");
  if (predictions.rows() == 0) return 0.0;
  return (predictions - targets).squaredNorm() / static_cast<double>(predictions.rows());
}

LossSpec mse_loss() {
  LossSpec spec;
  spec.component_names = {"L_error"};
  spec.evaluate = [](const LossBatch& b) {
    LossResult r;
    r.value = mse(b.predictions, b.targets);
    r.components = {r.value};
    r.gradient = (2.0 / static_cast<double>(b.predictions.rows())) * (b.predictions - b.targets);
    return r;
  };
  return spec;
}

namespace {

LossResult run_loss(const Mlp& net, const TrainData& data, const LossSpec& loss, std::span<const Eigen::Index> rows,
                    std::vector<Eigen::MatrixXd>* cache) {
  const Eigen::MatrixXd x = data.inputs(rows, Eigen::all);
  const Eigen::MatrixXd y = data.targets(rows, Eigen::all);
  std::vector<Eigen::MatrixXd> a = forward_all(net, x);
  LossResult r = loss.evaluate(LossBatch{a.back(), y, x, rows});
  if (cache) *cache = std::move(a);
  return r;
}

}  // namespace

LossResult evaluate_loss(const Mlp& net, const TrainData& data, const LossSpec& loss,
                         std::span<const Eigen::Index> rows) {
  return run_loss(net, data, loss, rows, nullptr);
}

TrainResult train(const Mlp& initial, const TrainData& data, const LossSpec& loss, const TrainOptions& opts) {
  initial.validate();
  if (data.inputs.rows() != data.targets.rows()) throw ShapeError("train: inputs and targets row counts differ");
  if (data.inputs.cols() != initial.input_dim() || data.targets.cols() != initial.output_dim())
    throw ShapeError("train: table width does not match the network");
  if (data.train_rows.empty() || data.val_rows.empty()) throw ConfigError("train: empty train or validation set");

  TrainResult result{initial, {}};
  result.history.component_names = loss.component_names;
  if (opts.epochs <= 0) return result;

  Mlp net = initial;
  AdamState adam;
  adam.learning_rate = opts.learning_rate;
  adam.beta1 = opts.beta1;
  adam.beta2 = opts.beta2;
  adam.epsilon = opts.epsilon;

  const auto n_train = static_cast<Eigen::Index>(data.train_rows.size());
  const Eigen::Index batch = opts.batch_size <= 0 ? n_train : std::min<Eigen::Index>(opts.batch_size, n_train);
  std::vector<Eigen::Index> batch_starts;
  for (Eigen::Index s = 0; s < n_train; s += batch) batch_starts.push_back(s);

  Rng rng(opts.seed);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<Eigen::MatrixXd> cache;

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    shuffle_in_place(batch_starts, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_components.assign(loss.component_names.size(), 0.0);
    try {
      for (Eigen::Index start : batch_starts) {
        const Eigen::Index len = std::min(batch, n_train - start);
        const std::span<const Eigen::Index> rows(data.train_rows.data() + start, static_cast<std::size_t>(len));
        const LossResult r = run_loss(net, data, loss, rows, &cache);
        if (!std::isfinite(r.value)) throw DivergenceError("train: non-finite training loss", epoch);
        const double w = static_cast<double>(len) / static_cast<double>(n_train);
        rec.train_loss += w * r.value;
        for (std::size_t c = 0; c < r.components.size() && c < rec.train_components.size(); ++c)
          rec.train_components[c] += w * r.components[c];
        adam_step(net, backward_from(net, cache, r.gradient), adam);
      }
      const LossResult v = evaluate_loss(net, data, loss, data.val_rows);
      if (!std::isfinite(v.value)) throw DivergenceError("train: non-finite validation loss", epoch);
      rec.val_loss = v.value;
      rec.val_components = v.components;
    } catch (const DomainError& e) {
      // a loss term saw non-finite network output
      throw DivergenceError(std::string("train: ") + e.what(), epoch);
    }
    const double val = rec.val_loss;
    if (opts.on_epoch) opts.on_epoch(rec);
    result.history.epochs.push_back(std::move(rec));

    if (val < best_val) {
      best_val = val;
      result.net = net;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (opts.patience > 0 && ++since_best >= opts.patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  return result;
}

void to_json(nlohmann::json& j, const Mlp& net) {
  std::vector<std::string> acts;
  for (auto a : net.activations) acts.push_back(to_string(a));
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (int l = 0; l < net.layers(); ++l) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(net.weights[l].size()));
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) w.push_back(net.weights[l](r, c));
    weights.push_back(w);
    biases.push_back(std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
  }
  j = {{"layer_sizes", net.layer_sizes}, {"activations", acts}, {"output_activation", "identity"},
       {"weights", weights}, {"biases", biases}};
}

void from_json(const nlohmann::json& j, Mlp& net) {
  require_keys_subset(j, {"layer_sizes", "activations", "output_activation", "weights", "biases", "metadata"}, "mlp");
  net = Mlp{};
  net.layer_sizes = read_required<std::vector<int>>(j, "layer_sizes", "mlp");
  for (const auto& a : read_required<std::vector<std::string>>(j, "activations", "mlp"))
    net.activations.push_back(activation_from_string(a));
  const auto weights = read_required<std::vector<std::vector<double>>>(j, "weights", "mlp");
  const auto biases = read_required<std::vector<std::vector<double>>>(j, "biases", "mlp");
  if (weights.size() + 1 != net.layer_sizes.size() || biases.size() != weights.size())
    throw ConfigError("mlp: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const int rows = net.layer_sizes[l + 1], cols = net.layer_sizes[l];
    if (static_cast<int>(weights[l].size()) != rows * cols || static_cast<int>(biases[l].size()) != rows)
      throw ConfigError("mlp: parameter array length mismatch in layer " + std::to_string(l));
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = weights[l][static_cast<std::size_t>(r * cols + c)];
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::Map<const Eigen::VectorXd>(biases[l].data(), rows));
  }
  try {
    net.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
}

nlohmann::json mlp_checkpoint(const Mlp& net, const nlohmann::json& metadata) {
  nlohmann::json j = net;
  j["metadata"] = metadata;
  return j;
}

std::string history_to_csv(const TrainHistory& history) {
  std::string out = "epoch";
  for (const auto& name : history.component_names) out += "," + name;
  out += ",total,val_total\n";
  for (const auto& rec : history.epochs) {
    out += std::to_string(rec.epoch);
    for (double c : rec.train_components) out += "," + format_double(c);
    out += "," + format_double(rec.train_loss) + "," + format_double(rec.val_loss) + "\n";
  }
  return out;
}

}  // namespace pgnnl
