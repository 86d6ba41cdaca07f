#include "cfran/nn.hpp"

#include <cmath>
#include <random>

#include "cfran/error.hpp"

namespace cfran {

Mlp::Mlp(std::vector<int> layer_sizes, std::uint64_t seed, Activation hidden_activation)
    : sizes_(std::move(layer_sizes)), hidden_(hidden_activation) {
  require(sizes_.size() >= 2, "Mlp needs at least an input and an output size");
  for (int s : sizes_) require(s >= 1, "Mlp layer sizes must be positive");

  Eigen::Index total = 0;
  for (int i = 0; i + 1 < static_cast<int>(sizes_.size()); ++i) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[i + 1]) * sizes_[i] + sizes_[i + 1];
  }
  params_ = VectorXd::Zero(total);

  std::mt19937_64 rng(seed);
  for (int i = 0; i < num_layers(); ++i) {
    const double a = std::sqrt(6.0 / (sizes_[i] + sizes_[i + 1]));
    std::uniform_real_distribution<double> u(-a, a);
    auto w = weight(i);
    for (Eigen::Index j = 0; j < w.size(); ++j) w.data()[j] = u(rng);
  }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
  return {params_.data() + offset(layer), sizes_[layer + 1], sizes_[layer]};
}
Eigen::Map<const VectorXd> Mlp::bias(int layer) const {
  return {params_.data() + offset(layer) + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer],
          sizes_[layer + 1]};
}
Eigen::Map<Eigen::MatrixXd> Mlp::weight(int layer) {
  return {params_.data() + offset(layer), sizes_[layer + 1], sizes_[layer]};
}
Eigen::Map<VectorXd> Mlp::bias(int layer) {
  return {params_.data() + offset(layer) + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer],
          sizes_[layer + 1]};
}

void Mlp::scale_output_layer(double factor) {
  const int last = num_layers() - 1;
  weight(last) *= factor;
  bias(last) *= factor;
}

VectorXd Mlp::forward(const VectorXd& x) const {
  Tape tape;
  return forward(x, tape);
}

VectorXd Mlp::forward(const VectorXd& x, Tape& tape) const {
  require(x.size() == input_size(), "Mlp input has the wrong size");
  tape.inputs.clear();
  tape.outputs.clear();
  VectorXd h = x;
  for (int i = 0; i < num_layers(); ++i) {
    tape.inputs.push_back(h);
    VectorXd y = weight(i) * h + bias(i);
    if (i + 1 < num_layers() && hidden_ == Activation::Tanh) y = y.array().tanh().matrix();
    tape.outputs.push_back(y);
    h = std::move(y);
  }
  return h;
}

VectorXd Mlp::backward(const Tape& tape, const VectorXd& grad_output, VectorXd& grad) const {
  require(static_cast<int>(tape.inputs.size()) == num_layers(), "Mlp tape does not match the network");
  require(grad_output.size() == output_size(), "Mlp output gradient has the wrong size");
  if (grad.size() != params_.size()) grad = VectorXd::Zero(params_.size());

  VectorXd delta = grad_output;
  for (int i = num_layers() - 1; i >= 0; --i) {
    if (i + 1 < num_layers() && hidden_ == Activation::Tanh)
      delta = (delta.array() * (1.0 - tape.outputs[i].array().square())).matrix();
    const int out = sizes_[i + 1];
    const int in = sizes_[i];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offset(i), out, in);
    Eigen::Map<VectorXd> gb(grad.data() + offset(i) + static_cast<Eigen::Index>(out) * in, out);
    gw.noalias() += delta * tape.inputs[i].transpose();
    gb += delta;
    delta = weight(i).transpose() * delta;
  }
  return delta;
}

void AdamState::reset(Eigen::Index n) {
  m = VectorXd::Zero(n);
  v = VectorXd::Zero(n);
  t = 0;
}

void Adam::step(VectorXd& params, const VectorXd& grad, AdamState& state) const {
  require(grad.size() == params.size(), "Adam gradient size mismatch");
  if (state.m.size() != params.size()) state.reset(params.size());
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  params.array() -= learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + epsilon);
}

}  // namespace cfran
