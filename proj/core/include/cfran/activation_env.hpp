#pragma once

// O-RU activation environment: each step applies a joint on/off vector,
// re-solves the precoder under it and scores the outcome with the shared
// activation reward.

#include <map>
#include <random>
#include <vector>

#include "cfran/mappo.hpp"
#include "cfran/precoder.hpp"

namespace cfran {

struct ActivationEnvConfig {
  int episode_length = 10;
  int l_max = 3;
  /// Per-episode lambda_k drawn log-uniformly from [lambda_min, lambda_max]
  /// when randomize_lambda is set, else every user uses lambda_min.
  double lambda_min = 1.0;
  double lambda_max = 100.0;
  bool randomize_lambda = true;
  /// Probability that an episode starts from a random activation instead of all-on.
  double random_start_prob = 0.5;
  SolverConfig solver;
};

class ActivationEnv : public Environment {
 public:
  ActivationEnv(LargeScaleFading fading, ChannelSet channels, UtilitySpec spec, ActivationEnvConfig config);

  int num_agents() const override { return fading_.num_orus(); }
  int num_users() const override { return fading_.num_users(); }
  std::vector<VectorXd> reset(std::mt19937_64& rng) override;
  EnvStep step(const ActivationVector& z) override;

  /// Rates (Mbps) after a full solve under z; cached per z.
  const std::vector<double>& evaluate(const ActivationVector& z);

  const std::vector<double>& lambda() const { return lambda_; }
  void set_lambda(std::vector<double> lambda);
  const ActivationVector& previous_activation() const { return z_prev_; }
  std::size_t cache_size() const { return cache_.size(); }
  std::size_t solves() const { return solves_; }

 private:
  LargeScaleFading fading_;
  ChannelSet channels_;
  UtilitySpec spec_;
  ActivationEnvConfig config_;

  std::vector<double> lambda_;
  ActivationVector z_prev_;
  std::vector<double> violations_;
  int t_ = 0;

  std::map<ActivationVector, std::vector<double>> cache_;
  std::size_t solves_ = 0;
};

}  // namespace cfran
