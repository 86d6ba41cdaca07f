#include "cfran/activation_env.hpp"

#include <cmath>

#include "cfran/error.hpp"

namespace cfran {

ActivationEnv::ActivationEnv(LargeScaleFading fading, ChannelSet channels, UtilitySpec spec,
                             ActivationEnvConfig config)
    : fading_(std::move(fading)), channels_(std::move(channels)), spec_(std::move(spec)), config_(config) {
  fading_.validate();
  require(channels_.num_users == fading_.num_users() && channels_.num_orus == fading_.num_orus(),
          "channels and fading disagree on K or L");
  spec_.validate(fading_.num_users());
  require(config_.episode_length >= 1, "episode length must be >= 1");
  require(config_.l_max >= 1, "l_max must be >= 1");
  require(config_.lambda_min > 0.0 && config_.lambda_max >= config_.lambda_min, "invalid lambda range");
  lambda_.assign(static_cast<std::size_t>(num_users()), config_.lambda_min);
  z_prev_.assign(static_cast<std::size_t>(num_agents()), 1);
  violations_.assign(static_cast<std::size_t>(num_users()), 0.0);
}

void ActivationEnv::set_lambda(std::vector<double> lambda) {
  require(static_cast<int>(lambda.size()) == num_users(), "lambda must have one entry per user");
  lambda_ = std::move(lambda);
}

const std::vector<double>& ActivationEnv::evaluate(const ActivationVector& z) {
  require(static_cast<int>(z.size()) == num_agents(), "activation vector has the wrong length");
  auto it = cache_.find(z);
  if (it != cache_.end()) return it->second;
  const Association assoc = associate_users(fading_, z, config_.l_max);
  const PrecodingState s = solve(channels_, assoc, spec_, z, config_.solver);
  ++solves_;
  return cache_.emplace(z, s.rates_mbps).first->second;
}

std::vector<VectorXd> ActivationEnv::reset(std::mt19937_64& rng) {
  if (config_.randomize_lambda) {
    std::uniform_real_distribution<double> u(std::log(config_.lambda_min), std::log(config_.lambda_max));
    for (auto& l : lambda_) l = std::exp(u(rng));
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < config_.random_start_prob) {
    for (auto& z : z_prev_) z = coin(rng) < 0.5 ? 1 : 0;
  } else {
    z_prev_.assign(z_prev_.size(), 1);
  }
  violations_ = normalized_violations(evaluate(z_prev_), spec_.r_min_mbps);
  t_ = 0;
  return build_observations(fading_, violations_, lambda_, z_prev_);
}

EnvStep ActivationEnv::step(const ActivationVector& z) {
  const auto& rates = evaluate(z);
  violations_ = normalized_violations(rates, spec_.r_min_mbps);
  EnvStep out;
  out.reward = compute_reward(z, z_prev_, violations_, lambda_);
  for (int a : z) out.active += a;
  for (double v : violations_) out.violation_sum += v;
  z_prev_ = z;
  ++t_;
  out.observations = build_observations(fading_, violations_, lambda_, z_prev_);
  return out;
}

}  // namespace cfran
