#pragma once

// Small dense networks with hand-written reverse mode, enough for the PPO
// actors/critic and the memory autoencoder.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cfran {

using Eigen::VectorXd;

enum class Activation { Tanh, Identity };

/// Fully connected network. Hidden layers use `hidden_activation`, the last
/// layer is linear. All weights and biases live in one flat vector, layer by
/// layer, each layer stored as W (out x in, column-major) followed by b.
class Mlp {
 public:
  struct Tape {
    std::vector<VectorXd> inputs;  ///< input to each layer
    std::vector<VectorXd> outputs; ///< post-activation output of each layer
  };

  Mlp() = default;
  /// Glorot-uniform weights, zero biases.
  Mlp(std::vector<int> layer_sizes, std::uint64_t seed, Activation hidden_activation = Activation::Tanh);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  Eigen::Index num_params() const { return params_.size(); }

  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }

  /// Multiply the last layer's weights and bias by `factor`.
  void scale_output_layer(double factor);

  VectorXd forward(const VectorXd& x) const;
  VectorXd forward(const VectorXd& x, Tape& tape) const;

  /// Adds dL/dparams to `grad` given dL/doutput for the pass recorded in
  /// `tape`. Returns dL/dinput.
  VectorXd backward(const Tape& tape, const VectorXd& grad_output, VectorXd& grad) const;

  /// Weight matrix / bias of layer i as views into params().
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<VectorXd> bias(int layer);

 private:
  Eigen::Index offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

  std::vector<int> sizes_{1, 1};
  std::vector<Eigen::Index> offsets_;
  Activation hidden_ = Activation::Tanh;
  VectorXd params_;
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  long long t = 0;

  void reset(Eigen::Index n);
};

struct Adam {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// One descent step params -= lr * mhat / (sqrt(vhat) + eps).
  void step(VectorXd& params, const VectorXd& grad, AdamState& state) const;
};

}  // namespace cfran
