#pragma once

// Feed-forward network with hand-written reverse mode and ADAM.
// Batches are row-major in the sense "one sample per row".

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace pgnnl {

enum class Activation { Tanh, Relu };
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// layer_sizes = (input, hidden..., output). Layer l maps a row vector a to
/// act(a W_l^T + b_l^T); the output layer is affine.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Activation> activations;  // one per hidden layer
  std::vector<Eigen::MatrixXd> weights;  // out x in
  std::vector<Eigen::VectorXd> biases;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int layers() const { return static_cast<int>(weights.size()); }
  /// Hidden plus output neurons.
  int neuron_count() const;
  Eigen::Index parameter_count() const;
  bool all_finite() const;
  void validate() const;
};

/// Glorot-uniform weights, zero biases. `activations` holds either one entry
/// per hidden layer or a single entry used for all of them.
Mlp init_mlp(const std::vector<int>& layer_sizes, const std::vector<Activation>& activations, std::uint64_t seed);

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& batch);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd input;  // d loss / d batch
};

/// Reverse-mode gradients of <upstream, forward(net, batch)>.
MlpGradients backward(const Mlp& net, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::VectorXd> m_biases, v_biases;
};

/// One bias-corrected ADAM update in place. Non-finite gradients throw
/// DivergenceError naming the offending layer; the net is left untouched.
void adam_step(Mlp& net, const MlpGradients& grads, AdamState& state);

/// What a loss sees for one batch. `rows` are indices into the full table
/// the batch was drawn from, in batch order.
struct LossBatch {
  const Eigen::MatrixXd& predictions;
  const Eigen::MatrixXd& targets;
  const Eigen::MatrixXd& inputs;
  std::span<const Eigen::Index> rows;
};

struct LossResult {
  double value = 0.0;
  std::vector<double> components;  // aligned with LossSpec::component_names
  Eigen::MatrixXd gradient;        // d value / d predictions
};

struct LossSpec {
  std::vector<std::string> component_names;
  std::function<LossResult(const LossBatch&)> evaluate;
};

/// (1/N) sum_k ||y_hat_k - y_k||^2
LossSpec mse_loss();
double mse(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets);

struct TrainData {
  const Eigen::MatrixXd& inputs;
  const Eigen::MatrixXd& targets;
  std::vector<Eigen::Index> train_rows;
  std::vector<Eigen::Index> val_rows;
};

struct EpochRecord;

struct TrainOptions {
  int epochs = 500;
  /// Rows per mini-batch; 0 means full batch. Batches are contiguous runs
  /// of train_rows so row-adjacent loss terms stay inside one batch; the
  /// batch order is reshuffled every epoch.
  int batch_size = 256;
  std::uint64_t seed = 0;
  int patience = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Called after every completed epoch, e.g. to keep a partial history.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> train_components;
  std::vector<double> val_components;
};

struct TrainHistory {
  std::vector<std::string> component_names;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  bool stopped_early = false;
};

struct TrainResult {
  Mlp net;  // parameters of the best validation epoch
  TrainHistory history;
};

/// Mini-batch ADAM with seeded batch shuffling and early stopping on the
/// validation loss. Throws DivergenceError (step = epoch) on a non-finite loss,
/// including a DomainError raised inside a loss term.
TrainResult train(const Mlp& initial, const TrainData& data, const LossSpec& loss, const TrainOptions& opts);

/// Evaluates `loss` on the given rows in one batch.
LossResult evaluate_loss(const Mlp& net, const TrainData& data, const LossSpec& loss,
                         std::span<const Eigen::Index> rows);

void to_json(nlohmann::json& j, const Mlp& net);
void from_json(const nlohmann::json& j, Mlp& net);

/// Checkpoint = network JSON plus a free-form "metadata" object.
nlohmann::json mlp_checkpoint(const Mlp& net, const nlohmann::json& metadata);

/// CSV `epoch,<component...>,total,val_total` for a training history.
std::string history_to_csv(const TrainHistory& history);

}  // namespace pgnnl
