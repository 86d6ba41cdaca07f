#pragma once

// Multi-agent PPO for O-RU on/off control: one binary policy per O-RU, a
// centralized critic over the joint observation, finite-horizon advantages
// and the clipped-surrogate update.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "cfran/net_model.hpp"
#include "cfran/nn.hpp"

namespace cfran {

struct MappoHyper {
  double gamma = 0.9;
  double clip_eps = 0.2;
  double c1 = 0.01;  ///< entropy bonus
  double c2 = 0.5;   ///< value loss weight
  double lr_policy = 1e-4;
  double lr_critic = 1e-4;
  int epochs = 4;
  int episode_length = 10;
  int policy_hidden = 64;
  int critic_hidden = 128;
  bool standardize_advantages = true;

  void validate() const;
};

/// Action index 0 is "off", 1 is "on".
constexpr int kActionOff = 0;
constexpr int kActionOn = 1;

/// Per-agent o_l = [log beta_{0,l}, tanh(lambda_0 v_0), ..., log beta_{K-1,l},
/// tanh(lambda_{K-1} v_{K-1}), z_prev_l]; length 2K + 1. `violations` are the
/// normalized shortfalls (see normalized_violations).
std::vector<VectorXd> build_observations(const LargeScaleFading& fading, const std::vector<double>& violations,
                                         const std::vector<double>& lambda, const ActivationVector& z_prev);

/// Concatenation o_0 | o_1 | ... | o_{L-1}.
VectorXd joint_observation(const std::vector<VectorXd>& observations);

/// max(0, R_min - r) / R_min per user, 0 where R_min = 0.
std::vector<double> normalized_violations(const std::vector<double>& rates_mbps,
                                          const std::vector<double>& r_min_mbps);

/// -(1/L) sum z - (1/K) sum lambda_k v_k - (1/L) sum |z - z_prev|.
double compute_reward(const ActivationVector& z, const ActivationVector& z_prev,
                      const std::vector<double>& violations, const std::vector<double>& lambda);

struct AdvantageResult {
  std::vector<double> advantages;  ///< raw, not standardized
  std::vector<double> returns;     ///< G_t = sum_i gamma^i R_{t+i}
};

/// A_t = sum_{i=0}^{T-t-1} gamma^i (R_{t+i} + gamma V_{t+i+1} - V_{t+i}).
/// `values` has T + 1 entries; the last is the value of the terminal observation.
AdvantageResult compute_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   double gamma);

/// Zero mean, unit variance (eps 1e-8). A single sample maps to 0.
std::vector<double> standardize(const std::vector<double>& x, double eps = 1e-8);

/// log softmax of a logit vector.
VectorXd log_softmax(const VectorXd& logits);

/// argmax with ties going to the lower action (off).
int argmax_action(const VectorXd& logits);

struct PolicySample {
  VectorXd observation;  ///< network input
  int action = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
};

struct PolicyLossTerms {
  double clip = 0.0;     ///< L_CLIP
  double entropy = 0.0;  ///< L_ENT
  VectorXd grad_clip;    ///< d L_CLIP / d theta
  VectorXd grad_entropy; ///< d L_ENT / d theta
};

PolicyLossTerms policy_losses(const Mlp& policy, const std::vector<PolicySample>& batch, double clip_eps,
                              bool with_gradients = true);

struct ValueLossTerms {
  double value = 0.0;  ///< L_V
  VectorXd grad;       ///< d L_V / d phi
};

ValueLossTerms value_loss(const Mlp& critic, const std::vector<VectorXd>& joint_observations,
                          const std::vector<double>& returns, bool with_gradients = true);

struct PpoLosses {
  double clip = 0.0;
  double entropy = 0.0;
  double value = 0.0;
  double total = 0.0;  ///< -L_CLIP - c1 L_ENT + c2 L_V
};

PpoLosses ppo_losses(const Mlp& policy, const std::vector<PolicySample>& batch, const Mlp& critic,
                     const std::vector<VectorXd>& joint_observations, const std::vector<double>& returns,
                     const MappoHyper& hyper);

/// Argmax action of every agent's policy on its own observation.
ActivationVector infer_activations(const std::vector<Mlp>& policies, const std::vector<VectorXd>& observations);

struct EnvStep {
  double reward = 0.0;
  std::vector<VectorXd> observations;  ///< next per-agent observations
  int active = 0;
  double violation_sum = 0.0;  ///< sum of normalized violations
};

/// Episodic environment driven by joint on/off actions.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual int num_agents() const = 0;
  virtual int num_users() const = 0;
  virtual std::vector<VectorXd> reset(std::mt19937_64& rng) = 0;
  virtual EnvStep step(const ActivationVector& z) = 0;
};

struct Transition {
  std::vector<VectorXd> observations;
  ActivationVector actions;
  std::vector<double> log_probs;  ///< behaviour policy, per agent
  double reward = 0.0;
  double violation_sum = 0.0;
};

struct Trajectory {
  std::vector<Transition> steps;
  std::vector<VectorXd> final_observations;
};

struct IterationStats {
  int iteration = 0;
  double mean_reward = 0.0;
  double active_fraction = 0.0;
  double violation_sum = 0.0;  ///< mean per step
  double policy_loss = 0.0;    ///< mean over agents, last epoch
  double value_loss = 0.0;
  bool aborted = false;        ///< non-finite loss, update skipped
};

class MappoController {
 public:
  MappoController() = default;
  /// `fading` fixes the affine rescaling of the log beta inputs.
  MappoController(int num_users, int num_orus, const LargeScaleFading& fading, MappoHyper hyper,
                  std::uint64_t seed);

  int num_users() const { return num_users_; }
  int num_orus() const { return num_orus_; }
  const MappoHyper& hyper() const { return hyper_; }
  MappoHyper& hyper() { return hyper_; }

  std::vector<Mlp>& policies() { return policies_; }
  const std::vector<Mlp>& policies() const { return policies_; }
  Mlp& critic() { return critic_; }
  const Mlp& critic() const { return critic_; }

  /// Network input for a raw observation.
  VectorXd scale_observation(const VectorXd& observation) const;
  std::vector<VectorXd> scale_observations(const std::vector<VectorXd>& observations) const;

  ActivationVector sample(const std::vector<VectorXd>& observations, std::mt19937_64& rng,
                          std::vector<double>* log_probs = nullptr) const;
  ActivationVector infer(const std::vector<VectorXd>& observations) const;
  double value(const std::vector<VectorXd>& observations) const;

  Trajectory collect(Environment& env, std::mt19937_64& rng) const;
  /// One collect + update round.
  IterationStats train_iteration(Environment& env, std::mt19937_64& rng);
  /// Update from an already collected trajectory.
  IterationStats update(const Trajectory& trajectory);

  void save(const std::string& path) const;
  static MappoController load(const std::string& path);
  void write(std::ostream& out) const;
  static MappoController read(std::istream& in);

 private:
  int num_users_ = 0;
  int num_orus_ = 0;
  MappoHyper hyper_;
  double log_beta_shift_ = 0.0;
  double log_beta_scale_ = 1.0;
  std::vector<Mlp> policies_;
  std::vector<AdamState> policy_adam_;
  Mlp critic_;
  AdamState critic_adam_;
  int iterations_ = 0;
};

}  // namespace cfran
