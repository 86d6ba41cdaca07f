#include "cfran/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cfran/error.hpp"

namespace cfran {

void MappoHyper::validate() const {
  require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
  require(clip_eps > 0.0 && clip_eps < 1.0, "clip epsilon must lie in (0, 1)");
  require(c1 >= 0.0 && c2 >= 0.0, "loss weights must be non-negative");
  require(lr_policy >= 0.0 && lr_critic >= 0.0, "learning rates must be non-negative");
  require(epochs >= 1, "epochs must be >= 1");
  require(episode_length >= 1, "episode length must be >= 1");
  require(policy_hidden >= 1 && critic_hidden >= 1, "hidden sizes must be positive");
}

std::vector<VectorXd> build_observations(const LargeScaleFading& fading, const std::vector<double>& violations,
                                         const std::vector<double>& lambda, const ActivationVector& z_prev) {
  const int K = fading.num_users();
  const int L = fading.num_orus();
  require(static_cast<int>(violations.size()) == K, "violations must have one entry per user");
  require(static_cast<int>(lambda.size()) == K, "lambda must have one entry per user");
  require(static_cast<int>(z_prev.size()) == L, "previous activation must have one entry per O-RU");

  std::vector<double> pressure(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    require(violations[k] >= 0.0, "violations must be non-negative");
    pressure[k] = std::tanh(lambda[k] * violations[k]);
  }
  std::vector<VectorXd> obs(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    VectorXd o(2 * K + 1);
    for (int k = 0; k < K; ++k) {
      const double b = fading.beta(k, l);
      require(b > 0.0 && std::isfinite(b), "large-scale fading must be positive to take its log");
      o[2 * k] = std::log(b);
      o[2 * k + 1] = pressure[k];
    }
    o[2 * K] = static_cast<double>(z_prev[l]);
    obs[l] = std::move(o);
  }
  return obs;
}

VectorXd joint_observation(const std::vector<VectorXd>& observations) {
  Eigen::Index n = 0;
  for (const auto& o : observations) n += o.size();
  VectorXd joint(n);
  Eigen::Index at = 0;
  for (const auto& o : observations) {
    joint.segment(at, o.size()) = o;
    at += o.size();
  }
  return joint;
}

std::vector<double> normalized_violations(const std::vector<double>& rates_mbps,
                                          const std::vector<double>& r_min_mbps) {
  require(rates_mbps.size() == r_min_mbps.size(), "rates and minimum rates differ in length");
  std::vector<double> v(rates_mbps.size(), 0.0);
  for (std::size_t k = 0; k < v.size(); ++k)
    if (r_min_mbps[k] > 0.0) v[k] = std::max(0.0, r_min_mbps[k] - rates_mbps[k]) / r_min_mbps[k];
  return v;
}

double compute_reward(const ActivationVector& z, const ActivationVector& z_prev,
                      const std::vector<double>& violations, const std::vector<double>& lambda) {
  require(z.size() == z_prev.size() && !z.empty(), "activation vectors must match and be non-empty");
  require(violations.size() == lambda.size() && !violations.empty(), "violations and lambda must match");
  const double L = static_cast<double>(z.size());
  const double K = static_cast<double>(violations.size());
  double active = 0.0, switching = 0.0, penalty = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l) {
    active += z[l];
    switching += std::abs(z[l] - z_prev[l]);
  }
  for (std::size_t k = 0; k < violations.size(); ++k) penalty += lambda[k] * violations[k];
  return -active / L - penalty / K - switching / L;
}

AdvantageResult compute_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   double gamma) {
  const std::size_t T = rewards.size();
  require(values.size() == T + 1, "values must include the terminal observation");
  AdvantageResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double a = 0.0, g = 0.0;
  for (std::size_t s = T; s-- > 0;) {
    const double td = rewards[s] + gamma * values[s + 1] - values[s];
    a = td + gamma * a;
    g = rewards[s] + gamma * g;
    out.advantages[s] = a;
    out.returns[s] = g;
  }
  return out;
}

std::vector<double> standardize(const std::vector<double>& x, double eps) {
  if (x.empty()) return {};
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / (sd + eps);
  return out;
}

VectorXd log_softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

int argmax_action(const VectorXd& logits) {
  int best = 0;
  for (int j = 1; j < logits.size(); ++j)
    if (logits[j] > logits[best]) best = j;
  return best;
}

PolicyLossTerms policy_losses(const Mlp& policy, const std::vector<PolicySample>& batch, double clip_eps,
                              bool with_gradients) {
  require(!batch.empty(), "policy loss needs at least one sample");
  PolicyLossTerms out;
  if (with_gradients) {
    out.grad_clip = VectorXd::Zero(policy.num_params());
    out.grad_entropy = VectorXd::Zero(policy.num_params());
  }
  const double n = static_cast<double>(batch.size());
  Mlp::Tape tape;
  for (const auto& s : batch) {
    require(std::isfinite(s.old_log_prob), "behaviour policy gave zero probability to a taken action");
    const VectorXd logits = policy.forward(s.observation, tape);
    const VectorXd lp = log_softmax(logits);
    const VectorXd p = lp.array().exp().matrix();

    const double rho = std::exp(lp[s.action] - s.old_log_prob);
    const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
    const double a = s.advantage;
    const bool ratio_branch = rho * a <= clipped * a;
    out.clip += (ratio_branch ? rho * a : clipped * a) / n;

    const double h = -(p.array() * lp.array()).sum();
    out.entropy += h / n;

    if (!with_gradients) continue;
    if (ratio_branch && a != 0.0) {
      VectorXd g = -rho * a * p;
      g[s.action] += rho * a;
      policy.backward(tape, g / n, out.grad_clip);
    }
    const VectorXd gh = (-p.array() * (lp.array() + h)).matrix();
    policy.backward(tape, gh / n, out.grad_entropy);
  }
  return out;
}

ValueLossTerms value_loss(const Mlp& critic, const std::vector<VectorXd>& joint_observations,
                          const std::vector<double>& returns, bool with_gradients) {
  require(!returns.empty() && joint_observations.size() == returns.size(),
          "value loss needs one return per observation");
  ValueLossTerms out;
  if (with_gradients) out.grad = VectorXd::Zero(critic.num_params());
  const double n = static_cast<double>(returns.size());
  Mlp::Tape tape;
  for (std::size_t t = 0; t < returns.size(); ++t) {
    const double diff = critic.forward(joint_observations[t], tape)[0] - returns[t];
    out.value += diff * diff / n;
    if (with_gradients) critic.backward(tape, VectorXd::Constant(1, 2.0 * diff / n), out.grad);
  }
  return out;
}

PpoLosses ppo_losses(const Mlp& policy, const std::vector<PolicySample>& batch, const Mlp& critic,
                     const std::vector<VectorXd>& joint_observations, const std::vector<double>& returns,
                     const MappoHyper& hyper) {
  const auto p = policy_losses(policy, batch, hyper.clip_eps, false);
  const auto v = value_loss(critic, joint_observations, returns, false);
  PpoLosses out;
  out.clip = p.clip;
  out.entropy = p.entropy;
  out.value = v.value;
  out.total = -p.clip - hyper.c1 * p.entropy + hyper.c2 * v.value;
  return out;
}

ActivationVector infer_activations(const std::vector<Mlp>& policies, const std::vector<VectorXd>& observations) {
  require(policies.size() == observations.size(), "one observation per policy is required");
  ActivationVector z(policies.size());
  for (std::size_t l = 0; l < policies.size(); ++l) z[l] = argmax_action(policies[l].forward(observations[l]));
  return z;
}

// ---------------------------------------------------------------------------

MappoController::MappoController(int num_users, int num_orus, const LargeScaleFading& fading, MappoHyper hyper,
                                 std::uint64_t seed)
    : num_users_(num_users), num_orus_(num_orus), hyper_(hyper) {
  require(num_users >= 1 && num_orus >= 1, "controller needs at least one user and one O-RU");
  require(fading.num_users() == num_users && fading.num_orus() == num_orus, "fading does not match K and L");
  hyper_.validate();

  const Eigen::ArrayXXd logb = fading.beta.array().log();
  log_beta_shift_ = logb.mean();
  const double sd = std::sqrt((logb - log_beta_shift_).square().mean());
  log_beta_scale_ = sd > 1e-9 ? sd : 1.0;

  std::mt19937_64 seeder(seed);
  const int obs = 2 * num_users + 1;
  for (int l = 0; l < num_orus; ++l) {
    Mlp p({obs, hyper_.policy_hidden, hyper_.policy_hidden, 2}, seeder());
    p.scale_output_layer(0.01);
    policies_.push_back(std::move(p));
    policy_adam_.emplace_back();
    policy_adam_.back().reset(policies_.back().num_params());
  }
  critic_ = Mlp({obs * num_orus, hyper_.critic_hidden, hyper_.critic_hidden, 1}, seeder());
  critic_adam_.reset(critic_.num_params());
}

VectorXd MappoController::scale_observation(const VectorXd& observation) const {
  require(observation.size() == 2 * num_users_ + 1, "observation has the wrong length");
  VectorXd x = observation;
  for (int k = 0; k < num_users_; ++k) x[2 * k] = (x[2 * k] - log_beta_shift_) / log_beta_scale_;
  return x;
}

std::vector<VectorXd> MappoController::scale_observations(const std::vector<VectorXd>& observations) const {
  require(static_cast<int>(observations.size()) == num_orus_, "one observation per O-RU is required");
  std::vector<VectorXd> out;
  out.reserve(observations.size());
  for (const auto& o : observations) out.push_back(scale_observation(o));
  return out;
}

ActivationVector MappoController::sample(const std::vector<VectorXd>& observations, std::mt19937_64& rng,
                                         std::vector<double>* log_probs) const {
  const auto x = scale_observations(observations);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ActivationVector z(static_cast<std::size_t>(num_orus_));
  if (log_probs) log_probs->assign(z.size(), 0.0);
  for (int l = 0; l < num_orus_; ++l) {
    const VectorXd lp = log_softmax(policies_[l].forward(x[l]));
    z[l] = u(rng) < std::exp(lp[kActionOn]) ? kActionOn : kActionOff;
    if (log_probs) (*log_probs)[l] = lp[z[l]];
  }
  return z;
}

ActivationVector MappoController::infer(const std::vector<VectorXd>& observations) const {
  return infer_activations(policies_, scale_observations(observations));
}

double MappoController::value(const std::vector<VectorXd>& observations) const {
  return critic_.forward(joint_observation(scale_observations(observations)))[0];
}

Trajectory MappoController::collect(Environment& env, std::mt19937_64& rng) const {
  require(env.num_agents() == num_orus_ && env.num_users() == num_users_, "environment does not match controller");
  Trajectory traj;
  auto obs = env.reset(rng);
  for (int t = 0; t < hyper_.episode_length; ++t) {
    Transition tr;
    tr.observations = obs;
    tr.actions = sample(obs, rng, &tr.log_probs);
    EnvStep step = env.step(tr.actions);
    tr.reward = step.reward;
    tr.violation_sum = step.violation_sum;
    obs = std::move(step.observations);
    traj.steps.push_back(std::move(tr));
  }
  traj.final_observations = std::move(obs);
  return traj;
}

IterationStats MappoController::train_iteration(Environment& env, std::mt19937_64& rng) {
  return update(collect(env, rng));
}

IterationStats MappoController::update(const Trajectory& traj) {
  const std::size_t T = traj.steps.size();
  require(T >= 1, "empty trajectory");
  IterationStats stats;
  stats.iteration = ++iterations_;

  std::vector<VectorXd> joint(T + 1);
  std::vector<std::vector<VectorXd>> scaled(T);
  std::vector<double> rewards(T), values(T + 1);
  for (std::size_t t = 0; t < T; ++t) {
    scaled[t] = scale_observations(traj.steps[t].observations);
    joint[t] = joint_observation(scaled[t]);
    values[t] = critic_.forward(joint[t])[0];
    rewards[t] = traj.steps[t].reward;
    double on = 0.0;
    for (int a : traj.steps[t].actions) on += a;
    stats.active_fraction += on / num_orus_ / static_cast<double>(T);
    stats.mean_reward += rewards[t] / static_cast<double>(T);
    stats.violation_sum += traj.steps[t].violation_sum / static_cast<double>(T);
  }
  joint[T] = joint_observation(scale_observations(traj.final_observations));
  values[T] = critic_.forward(joint[T])[0];

  const auto adv = compute_advantages(rewards, values, hyper_.gamma);
  const std::vector<double> a = hyper_.standardize_advantages ? standardize(adv.advantages) : adv.advantages;
  const std::vector<VectorXd> critic_inputs(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(T));

  std::vector<std::vector<PolicySample>> batches(static_cast<std::size_t>(num_orus_));
  for (int l = 0; l < num_orus_; ++l)
    for (std::size_t t = 0; t < T; ++t)
      batches[l].push_back({scaled[t][l], traj.steps[t].actions[l], traj.steps[t].log_probs[l], a[t]});

  Adam policy_opt{hyper_.lr_policy};
  Adam critic_opt{hyper_.lr_critic};
  for (int epoch = 0; epoch < hyper_.epochs; ++epoch) {
    // compute every gradient before touching parameters so a bad batch
    // leaves the networks untouched
    std::vector<VectorXd> grads(static_cast<std::size_t>(num_orus_));
    double policy_loss = 0.0;
    bool finite = true;
    for (int l = 0; l < num_orus_; ++l) {
      const auto terms = policy_losses(policies_[l], batches[l], hyper_.clip_eps);
      grads[l] = -terms.grad_clip - hyper_.c1 * terms.grad_entropy;
      const double loss = -terms.clip - hyper_.c1 * terms.entropy;
      finite = finite && std::isfinite(loss) && grads[l].allFinite();
      policy_loss += loss / num_orus_;
    }
    const auto vterms = value_loss(critic_, critic_inputs, adv.returns);
    finite = finite && std::isfinite(vterms.value) && vterms.grad.allFinite();
    if (!finite) {
      stats.aborted = true;
      break;
    }
    for (int l = 0; l < num_orus_; ++l) policy_opt.step(policies_[l].params(), grads[l], policy_adam_[l]);
    critic_opt.step(critic_.params(), vterms.grad, critic_adam_);
    stats.policy_loss = policy_loss;
    stats.value_loss = vterms.value;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// checkpoint: "CFMAPPO1" magic, u32 version, then little-endian PODs

namespace {

constexpr char kMagic[8] = {'C', 'F', 'M', 'A', 'P', 'P', 'O', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

void put_vec(std::ostream& out, const VectorXd& v) {
  put<std::int64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

VectorXd get_vec(std::istream& in, Eigen::Index expected) {
  const auto n = get<std::int64_t>(in);
  if (n != expected) throw FormatError("checkpoint vector has unexpected length");
  VectorXd v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

void put_net(std::ostream& out, const Mlp& net, const AdamState& adam) {
  put<std::int32_t>(out, static_cast<std::int32_t>(net.layer_sizes().size()));
  for (int s : net.layer_sizes()) put<std::int32_t>(out, s);
  put_vec(out, net.params());
  put<std::int64_t>(out, adam.t);
  put_vec(out, adam.m);
  put_vec(out, adam.v);
}

void get_net(std::istream& in, Mlp& net, AdamState& adam) {
  const auto n = get<std::int32_t>(in);
  if (n < 2 || n > 16) throw FormatError("checkpoint network depth out of range");
  std::vector<int> sizes;
  for (int i = 0; i < n; ++i) {
    const auto s = get<std::int32_t>(in);
    if (s < 1 || s > (1 << 20)) throw FormatError("checkpoint layer size out of range");
    sizes.push_back(s);
  }
  net = Mlp(sizes, 0);
  net.params() = get_vec(in, net.num_params());
  adam.t = get<std::int64_t>(in);
  adam.m = get_vec(in, net.num_params());
  adam.v = get_vec(in, net.num_params());
}

}  // namespace

void MappoController::write(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put<std::int32_t>(out, num_users_);
  put<std::int32_t>(out, num_orus_);
  for (double v : {hyper_.gamma, hyper_.clip_eps, hyper_.c1, hyper_.c2, hyper_.lr_policy, hyper_.lr_critic})
    put(out, v);
  for (int v : {hyper_.epochs, hyper_.episode_length, hyper_.policy_hidden, hyper_.critic_hidden,
                hyper_.standardize_advantages ? 1 : 0, iterations_})
    put<std::int32_t>(out, v);
  put(out, log_beta_shift_);
  put(out, log_beta_scale_);
  for (int l = 0; l < num_orus_; ++l) put_net(out, policies_[l], policy_adam_[l]);
  put_net(out, critic_, critic_adam_);
}

MappoController MappoController::read(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("not a MAPPO checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));

  MappoController c;
  c.num_users_ = get<std::int32_t>(in);
  c.num_orus_ = get<std::int32_t>(in);
  if (c.num_users_ < 1 || c.num_orus_ < 1 || c.num_users_ > 100000 || c.num_orus_ > 100000)
    throw FormatError("checkpoint K/L out of range");
  c.hyper_.gamma = get<double>(in);
  c.hyper_.clip_eps = get<double>(in);
  c.hyper_.c1 = get<double>(in);
  c.hyper_.c2 = get<double>(in);
  c.hyper_.lr_policy = get<double>(in);
  c.hyper_.lr_critic = get<double>(in);
  c.hyper_.epochs = get<std::int32_t>(in);
  c.hyper_.episode_length = get<std::int32_t>(in);
  c.hyper_.policy_hidden = get<std::int32_t>(in);
  c.hyper_.critic_hidden = get<std::int32_t>(in);
  c.hyper_.standardize_advantages = get<std::int32_t>(in) != 0;
  c.iterations_ = get<std::int32_t>(in);
  c.log_beta_shift_ = get<double>(in);
  c.log_beta_scale_ = get<double>(in);
  try {
    c.hyper_.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint hyperparameters invalid: ") + e.what());
  }

  const int obs = 2 * c.num_users_ + 1;
  c.policies_.resize(static_cast<std::size_t>(c.num_orus_));
  c.policy_adam_.resize(static_cast<std::size_t>(c.num_orus_));
  for (int l = 0; l < c.num_orus_; ++l) {
    get_net(in, c.policies_[l], c.policy_adam_[l]);
    if (c.policies_[l].input_size() != obs || c.policies_[l].output_size() != 2)
      throw FormatError("checkpoint policy shape does not match K");
  }
  get_net(in, c.critic_, c.critic_adam_);
  if (c.critic_.input_size() != obs * c.num_orus_ || c.critic_.output_size() != 1)
    throw FormatError("checkpoint critic shape does not match K and L");
  return c;
}

void MappoController::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write(out);
  if (!out) throw FormatError("failed writing " + path);
}

MappoController MappoController::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return read(in);
}

}  // namespace cfran
