// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace rxads::rae {

/// Residual connection from activation `from` into the pre-activation of
/// layer `to` (activation 0 is the input). Identity skips need equal widths;
/// projection skips carry a learned linear map.
struct Skip {
  int from = 0;
  int to = 0;
  bool projection = false;
  bool operator==(const Skip&) const = default;
};

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

/// Sigmoid autoencoder with residual skips. Every layer, including the
/// output, is z_l = W_l a_{l-1} + b_l + sum(skips into l); a_l = sigmoid(z_l).
/// Immutable once trained; all const members are safe to call concurrently.
struct RaeModel {
  std::vector<int> dims;
  std::vector<Layer> layers;  // layers[l-1] produces activation l
  std::vector<Skip> skips;
  std::vector<Eigen::MatrixXd> projections;  // parallel to skips; empty for identity skips
  double l1_coeff = 0.0;
  std::uint64_t seed = 0;

  int input_dim() const { return dims.front(); }
  int depth() const { return static_cast<int>(layers.size()); }
  std::size_t parameter_count() const;
  bool operator==(const RaeModel& other) const;
};

enum class SkipPlacement {
  None,
  /// Each hidden layer feeds the next hidden layer of the same width. For a
  /// mirrored stack like 64-32-16-32-64 this links each encoder layer to its
  /// decoder twin; for runs of equal widths it is the classic residual chain.
  NextEqualWidth,
};

std::vector<Skip> place_skips(const std::vector<int>& dims, SkipPlacement placement);

/// Glorot-uniform weights (and projection matrices), zero biases.
RaeModel init_model(const std::vector<int>& dims, double l1_coeff, std::uint64_t seed,
                    SkipPlacement placement = SkipPlacement::NextEqualWidth);
RaeModel init_model(const std::vector<int>& dims, const std::vector<Skip>& skips, double l1_coeff,
                    std::uint64_t seed);

/// Throws BadArchitecture when shapes, skips or dims are inconsistent.
void validate(const RaeModel& model);

struct ForwardResult {
  Eigen::VectorXd reconstruction;
  std::vector<Eigen::VectorXd> activations;  // activations[0] = input
};

ForwardResult forward(const RaeModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd reconstruct(const RaeModel& model, const Eigen::MatrixXd& samples);

/// ||x - x'||^2, no regularisation.
double sample_error(const RaeModel& model, const Eigen::VectorXd& x);
Eigen::VectorXd sample_errors(const RaeModel& model, const Eigen::MatrixXd& samples);

/// Sum of |w| over all weight matrices and projections (biases excluded).
double l1_norm(const RaeModel& model);

/// Mean sample error over the batch columns plus l1_coeff * l1_norm.
double batch_loss(const RaeModel& model, const Eigen::MatrixXd& batch);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::vector<Eigen::MatrixXd> projections;
};

/// Exact gradient of batch_loss; the L1 subgradient uses sign(0) = 0.
Gradients gradients(const RaeModel& model, const Eigen::MatrixXd& batch);
double loss_and_gradients(const RaeModel& model, const Eigen::MatrixXd& batch, Gradients& grads);

/// Gradient of sample_error with respect to the input, covering both the
/// direct x term and the path through the network.
Eigen::VectorXd input_gradient(const RaeModel& model, const Eigen::VectorXd& x);
double error_and_input_gradient(const RaeModel& model, const Eigen::VectorXd& x, Eigen::VectorXd& grad);

// Flat parameter views, ordered layer by layer (W column-major, then b),
// then each projection matrix.
Eigen::VectorXd flatten(const RaeModel& model);
void unflatten(RaeModel& model, const Eigen::VectorXd& params);
Eigen::VectorXd flatten(const Gradients& grads);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t shuffle_seed = 0;
  std::optional<int> patience;  // early stop on validation error, if a validation set is given
};

struct TrainHistory {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;       // full training-set batch_loss after each epoch
  std::vector<double> validation_error; // mean sample error, when validating
};

struct TrainResult {
  RaeModel model;
  TrainHistory history;
};

/// Adam over shuffled mini-batches. Throws NonFiniteLoss if a batch loss
/// stops being finite.
TrainResult fit(RaeModel model, const Eigen::MatrixXd& train, const TrainConfig& config,
                const Eigen::MatrixXd* validation = nullptr);

}  // namespace rxads::rae
