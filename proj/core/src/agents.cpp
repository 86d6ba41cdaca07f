#include "cfran/agents.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "cfran/error.hpp"

namespace cfran {

namespace {

std::vector<double> to_bits(const std::vector<double>& mbps, double bandwidth_hz) {
  std::vector<double> out(mbps.size());
  for (std::size_t i = 0; i < mbps.size(); ++i) out[i] = mbps[i] * 1e6 / bandwidth_hz;
  return out;
}

std::string join_users(const std::vector<int>& users) {
  std::string s;
  for (std::size_t i = 0; i < users.size(); ++i) s += (i ? ", " : "") + std::to_string(users[i] + 1);
  return s;
}

}  // namespace

void AgentConfig::validate() const {
  require(window >= 1, "window must be >= 1");
  require(alpha_high > 0.0, "alpha_high must be positive");
  require(boost_factor > 1.0, "boost factor must exceed 1");
  require(lambda_init >= 0.0 && lambda_init <= lambda_max, "lambda_init must lie in [0, lambda_max]");
  require(lambda_growth >= 1.0, "lambda growth must be >= 1");
  require(viol_tol_mbps >= 0.0 && stall_tol_mbps >= 0.0, "tolerances must be >= 0");
  require(stall_min_entries >= 2, "stall detection needs at least two entries");
  require(patience >= 1 && loop_cap >= 1, "patience and loop_cap must be >= 1");
  require(dual_step > 0.0, "dual step must be positive");
}

// ---------------------------------------------------------------------------

HistoryWindow::HistoryWindow(int capacity) : capacity_(capacity) {
  require(capacity >= 1, "history window must hold at least one entry");
}

void HistoryWindow::push(HistoryEntry entry) {
  if (!entries_.empty()) require(entry.loop > entries_.back().loop, "history entries must be chronological");
  entries_.push_back(std::move(entry));
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

const HistoryEntry& HistoryWindow::latest() const {
  require(!entries_.empty(), "history window is empty");
  return entries_.back();
}

double HistoryWindow::rate_range(int user) const {
  require(!entries_.empty(), "history window is empty");
  double lo = entries_.front().rates_mbps.at(static_cast<std::size_t>(user));
  double hi = lo;
  for (const auto& e : entries_) {
    const double r = e.rates_mbps.at(static_cast<std::size_t>(user));
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return hi - lo;
}

PenaltyState PenaltyState::uniform(int num_users, double lambda_init, double lambda_max) {
  PenaltyState p;
  p.lambda.assign(static_cast<std::size_t>(num_users), lambda_init);
  p.lambda_max = lambda_max;
  p.validate();
  return p;
}

void PenaltyState::raise(int user, double growth) {
  require(user >= 0 && user < static_cast<int>(lambda.size()), "penalty user out of range");
  auto& l = lambda[static_cast<std::size_t>(user)];
  l = std::min(lambda_max, l * growth);
}

void PenaltyState::validate() const {
  for (double l : lambda) require(l >= 0.0 && l <= lambda_max, "lambda must lie in [0, lambda_max]");
}

bool MonitorDecision::boosts(int user) const {
  return std::any_of(actions.begin(), actions.end(), [&](const MonitorAction& a) {
    return a.user == user && a.kind == MonitorActionKind::BoostWeight;
  });
}

bool MonitorDecision::raises(int user) const {
  return std::any_of(actions.begin(), actions.end(), [&](const MonitorAction& a) {
    return a.user == user && a.kind == MonitorActionKind::RaisePenalty;
  });
}

std::string MonitorDecision::to_string() const {
  if (actions.empty()) return ok() ? "ok" : "violated(" + join_users(violated) + ")";
  std::string s;
  for (const auto& a : actions) {
    if (!s.empty()) s += ", ";
    s += a.kind == MonitorActionKind::BoostWeight ? "boost_weight(" : "raise_penalty(";
    s += std::to_string(a.user + 1) + ")";
  }
  return s;
}

nlohmann::json MonitorDecision::to_json() const {
  nlohmann::json acts = nlohmann::json::array();
  for (const auto& a : actions)
    acts.push_back({{"action", a.kind == MonitorActionKind::BoostWeight ? "boost_weight" : "raise_penalty"},
                    {"user", a.user + 1},
                    {"stalled", a.stalled}});
  std::vector<int> v;
  for (int k : violated) v.push_back(k + 1);
  return {{"ok", ok()}, {"actions", acts}, {"violated", v}};
}

WeightingState WeightingState::initial(int num_users) {
  return {std::vector<double>(static_cast<std::size_t>(num_users), 0.0),
          std::vector<double>(static_cast<std::size_t>(num_users), 1.0)};
}

std::vector<double> violations_mbps(const std::vector<double>& rates_mbps, const std::vector<double>& r_min_mbps) {
  require(rates_mbps.size() == r_min_mbps.size(), "rates and minimum rates differ in length");
  std::vector<double> v(rates_mbps.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::max(0.0, r_min_mbps[k] - rates_mbps[k]);
  return v;
}

// ---------------------------------------------------------------------------

WeightingResult user_weighting_step(const UtilitySpec& spec, const std::vector<double>& rates_mbps,
                                    WeightingState& state, const MonitorDecision* monitor,
                                    const Experience* retrieved, const AgentConfig& agents,
                                    const SolverConfig& solver, double bandwidth_hz) {
  const int K = static_cast<int>(rates_mbps.size());
  spec.validate(K);
  require(static_cast<int>(state.mu.size()) == K && static_cast<int>(state.boost.size()) == K,
          "weighting state has the wrong size");
  const auto bits = to_bits(rates_mbps, bandwidth_hz);
  const std::vector<double> zero(static_cast<std::size_t>(K), 0.0);
  const auto marginal = priority_weights(bits, zero, spec, solver);

  WeightingResult out;
  if (retrieved != nullptr) {
    require(static_cast<int>(retrieved->alpha.size()) == K, "retrieved alpha has the wrong size");
    out.alpha = retrieved->alpha;
    for (int k = 0; k < K; ++k) state.mu[k] = std::max(0.0, out.alpha[k] - marginal[k]);
    state.boost.assign(static_cast<std::size_t>(K), 1.0);
    out.mu = state.mu;
    out.from_memory = true;
    return out;
  }

  if (monitor != nullptr)
    for (const auto& a : monitor->actions)
      if (a.kind == MonitorActionKind::BoostWeight) state.boost[static_cast<std::size_t>(a.user)] *= agents.boost_factor;

  // Ascent on the relative shortfall only: rates above R_min leave mu where it is.
  std::vector<double> clipped = rates_mbps;
  UtilitySpec relative = spec;
  for (int k = 0; k < K; ++k) {
    clipped[k] = std::min(rates_mbps[k], spec.r_min_mbps[k]);
    relative.dual_step[k] = spec.r_min_mbps[k] > 0.0 ? agents.dual_step / spec.r_min_mbps[k] : 0.0;
  }
  state.mu = dual_ascent_update(state.mu, clipped, relative);

  out.mu = state.mu;
  out.alpha.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    out.alpha[k] = std::clamp(state.boost[k] * (marginal[k] + state.mu[k]), solver.alpha_floor, solver.alpha_cap);
  return out;
}

ActivationVector oru_management_step(const ObjectiveSpec& spec, const ManagementInput& input,
                                     PenaltyState& penalties, const MonitorDecision* monitor,
                                     const AgentConfig& config) {
  require(input.fading != nullptr, "O-RU management needs the large-scale fading");
  const int L = input.fading->num_orus();
  if (!spec.energy_saving) return ActivationVector(static_cast<std::size_t>(L), 1);

  if (input.controller == nullptr)
    throw InvalidArgument("energy saving needs a trained activation controller; run `cfran train` first");
  if (monitor != nullptr)
    for (const auto& a : monitor->actions)
      if (a.kind == MonitorActionKind::RaisePenalty) penalties.raise(a.user, config.lambda_growth);

  const auto v = normalized_violations(input.rates_mbps, spec.r_min_mbps);
  const auto obs = build_observations(*input.fading, v, penalties.lambda, input.z_prev);
  return input.controller->infer(obs);
}

MonitorDecision monitoring_step(const HistoryWindow& history, const std::vector<double>& alpha,
                                const std::vector<double>& lambda, const ObjectiveSpec& spec,
                                const AgentConfig& config) {
  const auto& latest = history.latest();
  const int K = static_cast<int>(latest.violation_mbps.size());
  require(static_cast<int>(alpha.size()) == K && static_cast<int>(lambda.size()) == K &&
              spec.num_users() == K,
          "monitoring inputs differ in length");
  MonitorDecision d;
  for (int k = 0; k < K; ++k) {
    if (spec.r_min_mbps[k] <= 0.0 || latest.violation_mbps[k] <= config.viol_tol_mbps) continue;
    d.violated.push_back(k);
    const bool stalled = history.size() >= config.stall_min_entries && history.rate_range(k) < config.stall_tol_mbps;
    const bool can_boost = alpha[k] < config.alpha_high;
    const bool can_raise = lambda[k] < config.lambda_max;
    MonitorAction a;
    a.user = k;
    a.stalled = stalled;
    // a stall escalates to the penalty while the penalty can still grow
    a.kind = can_boost && (!stalled || !can_raise) ? MonitorActionKind::BoostWeight
                                                   : MonitorActionKind::RaisePenalty;
    d.actions.push_back(a);
  }
  return d;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ControlMode mode) { return mode == ControlMode::Proposed ? "proposed" : "drl_ga"; }

int LoopSnapshot::active_count() const { return count_active(z); }

nlohmann::json LoopSnapshot::to_json(bool with_timing) const {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(m.to_json());
  nlohmann::json j{{"schema", "cfran.snapshot.v1"},
                   {"loop", loop},
                   {"episode", episode},
                   {"episode_loop", episode_loop},
                   {"intent", intent},
                   {"objective", objective.to_json()},
                   {"rates_mbps", rates_mbps},
                   {"z", z},
                   {"active", active_count()},
                   {"alpha", alpha},
                   {"mu", mu},
                   {"lambda", lambda},
                   {"violation_mbps", violation_mbps},
                   {"decision", decision.to_json()},
                   {"converged", converged},
                   {"convergence_loop", convergence_loop},
                   {"memory_hit", nullptr},
                   {"stored_to_memory", stored_to_memory},
                   {"solver_iterations", solver_iterations},
                   {"messages", msgs}};
  if (memory_hit)
    j["memory_hit"] = {{"similarity", memory_hit->similarity},
                       {"index", memory_hit->index},
                       {"stored_loops", memory_hit->stored_loops}};
  if (with_timing) j["wall_ms"] = wall_ms;
  return j;
}

// ---------------------------------------------------------------------------

Coordinator::Coordinator(World world, CoordinatorConfig config, MessageBus* bus, MemoryStore* memory,
                         const Autoencoder* encoder)
    : world_(std::move(world)),
      config_(config),
      bus_(bus),
      memory_(memory),
      encoder_(encoder),
      history_(config.agents.window) {
  config_.agents.validate();
  world_.fading.validate();
  const int K = world_.fading.num_users();
  const int L = world_.fading.num_orus();
  require(world_.channels.num_users == K && world_.channels.num_orus == L, "channels and fading disagree");
  require(world_.l_max >= 1 && world_.p_max_w > 0.0, "invalid l_max or power budget");
  if (world_.controller != nullptr)
    require(world_.controller->num_users() == K && world_.controller->num_orus() == L,
            "controller was trained for a different K or L");
  if (encoder_ != nullptr)
    require(encoder_->num_users() == K && encoder_->num_orus() == L, "encoder was fitted for a different K or L");

  objective_.r_min_mbps.assign(static_cast<std::size_t>(K), 0.0);
  utility_ = objective_.utility_spec(world_.p_max_w);
  weighting_ = WeightingState::initial(K);
  penalties_ = PenaltyState::uniform(K, config_.agents.lambda_init, config_.agents.lambda_max);
  alpha_.assign(static_cast<std::size_t>(K), 1.0);
  z_.assign(static_cast<std::size_t>(L), 1);

  const Association assoc = associate_users(world_.fading, z_, world_.l_max);
  SolveOptions opt;
  opt.fixed_alpha = alpha_;
  state_ = solve(world_.channels, assoc, utility_, z_, world_.solver, nullptr, opt);

  latest_.objective = objective_;
  latest_.rates_mbps = state_.rates_mbps;
  latest_.z = z_;
  latest_.alpha = alpha_;
  latest_.mu = weighting_.mu;
  latest_.lambda = penalties_.lambda;
  latest_.violation_mbps.assign(static_cast<std::size_t>(K), 0.0);
  latest_.solver_iterations = state_.iterations;
}

void Coordinator::start_intent(const std::string& text, const ObjectiveSpec& spec) {
  const int K = world_.fading.num_users();
  require(spec.num_users() == K, "objective has the wrong number of users");
  if (spec.energy_saving && world_.controller == nullptr)
    throw InvalidArgument("energy saving needs a trained activation controller; run `cfran train` first");
  objective_ = spec;
  utility_ = spec.utility_spec(world_.p_max_w);
  intent_text_ = text;
  ++episode_;
  episode_loop_ = 0;
  weighting_ = WeightingState::initial(K);
  penalties_ = PenaltyState::uniform(K, config_.agents.lambda_init, config_.agents.lambda_max);
  history_.clear();
  pending_ = {};
  ok_streak_ = 0;
  streak_start_ = -1;
  converged_ = false;
  convergence_loop_ = -1;
  stored_ = false;
  hit_.reset();
  if (config_.mode == ControlMode::Proposed && memory_ != nullptr && encoder_ != nullptr) {
    hit_ = memory_->retrieve(encoder_->embed(world_.fading, spec.r_min_mbps), spec.kind());
  }
}

void Coordinator::publish(Message m, LoopSnapshot& snap) {
  m.loop = snap.loop;
  if (bus_ != nullptr) m.seq = bus_->publish(m);
  snap.messages.push_back(std::move(m));
}

LoopSnapshot Coordinator::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const int K = world_.fading.num_users();
  const bool proposed = config_.mode == ControlMode::Proposed;

  LoopSnapshot snap;
  snap.loop = next_loop_++;
  snap.episode = episode_;
  snap.episode_loop = ++episode_loop_;
  snap.intent = intent_text_;
  snap.objective = objective_;

  const std::vector<double> observed = state_.rates_mbps;
  const bool frozen = converged_;
  if (!frozen) {
    const Experience* retrieved = (proposed && episode_loop_ == 1 && hit_) ? &hit_->experience : nullptr;
    if (retrieved != nullptr) {
      snap.memory_hit = MemoryHitInfo{hit_->similarity, hit_->index, hit_->experience.loops_to_converge};
      for (int k = 0; k < K; ++k)
        penalties_.lambda[k] = std::clamp(retrieved->lambda.at(static_cast<std::size_t>(k)), 0.0,
                                          penalties_.lambda_max);
    }

    if (proposed) {
      const auto w = user_weighting_step(utility_, observed, weighting_, &pending_, retrieved, config_.agents, world_.solver,
                                         world_.channels.bandwidth_hz);
      alpha_ = w.alpha;
    } else {
      const auto v = violations_mbps(observed, objective_.r_min_mbps);
      UtilitySpec ga = utility_;
      ga.dual_step.assign(static_cast<std::size_t>(K), config_.ga_mu_step);
      weighting_.mu = dual_ascent_update(weighting_.mu, observed, ga);
      alpha_ = priority_weights(to_bits(observed, world_.channels.bandwidth_hz), weighting_.mu, utility_,
                                world_.solver);
      if (objective_.energy_saving)
        for (int k = 0; k < K; ++k)
          penalties_.lambda[k] = std::min(penalties_.lambda_max, penalties_.lambda[k] + config_.ga_lambda_step * v[k]);
    }

    Message mw;
    mw.iface = Interface::E2;
    mw.sender = agent_names::kUserWeighting;
    mw.receiver = agent_names::kPrecoder;
    mw.kind = "priority_weights";
    mw.body = {{"alpha", alpha_}, {"mu", weighting_.mu}, {"from_memory", retrieved != nullptr}};
    mw.text = retrieved != nullptr ? "alpha from memory" : "alpha update";
    publish(std::move(mw), snap);

    ManagementInput in;
    in.fading = &world_.fading;
    in.controller = world_.controller;
    in.rates_mbps = observed;
    in.z_prev = z_;
    z_ = oru_management_step(objective_, in, penalties_, proposed ? &pending_ : nullptr, config_.agents);

    Message mz;
    mz.iface = Interface::E2;
    mz.sender = agent_names::kOruManagement;
    mz.receiver = agent_names::kPrecoder;
    mz.kind = "activation";
    mz.body = {{"z", z_}, {"lambda", penalties_.lambda}};
    mz.text = std::to_string(count_active(z_)) + "/" + std::to_string(z_.size()) + " O-RUs active";
    publish(std::move(mz), snap);
  }
  pending_ = {};

  // Each loop starts the precoder from the same initialization, so rates
  // depend only on (alpha, z). Carried-over precoders can keep a user that
  // earlier weights starved near zero. Nothing changes once converged.
  if (!frozen) {
    const Association assoc = associate_users(world_.fading, z_, world_.l_max);
    SolveOptions opt;
    opt.fixed_alpha = alpha_;
    state_ = solve(world_.channels, assoc, utility_, z_, world_.solver, nullptr, opt);
  } else {
    state_.iterations = 0;
  }
  state_.mu = weighting_.mu;

  const auto v = violations_mbps(state_.rates_mbps, objective_.r_min_mbps);
  Message mr;
  mr.iface = Interface::E2;
  mr.sender = agent_names::kPrecoder;
  mr.receiver = agent_names::kMonitoring;
  mr.kind = "rates";
  mr.body = {{"rates_mbps", state_.rates_mbps}, {"iterations", state_.iterations}};
  mr.text = "rates after " + std::to_string(state_.iterations) + " precoder passes";
  publish(std::move(mr), snap);

  history_.push({snap.loop, v, weighting_.mu, penalties_.lambda, alpha_, state_.rates_mbps});
  MonitorDecision d = monitoring_step(history_, alpha_, penalties_.lambda, objective_, config_.agents);
  if (!proposed) d.actions.clear();

  if (d.ok()) {
    if (ok_streak_++ == 0) streak_start_ = episode_loop_;
    if (!converged_ && ok_streak_ >= config_.agents.patience) {
      converged_ = true;
      convergence_loop_ = streak_start_;
      if (proposed && !stored_ && memory_ != nullptr && encoder_ != nullptr) {
        Experience e;
        e.key = encoder_->embed(world_.fading, objective_.r_min_mbps);
        e.alpha = alpha_;
        e.lambda = penalties_.lambda;
        e.kind = objective_.kind();
        e.loops_to_converge = convergence_loop_;
        memory_->store(std::move(e));
        stored_ = true;
        snap.stored_to_memory = true;
      }
    }
  } else {
    ok_streak_ = 0;
    converged_ = false;
    convergence_loop_ = -1;
    pending_ = d;
  }

  if (proposed) {
    Message mm;
    mm.iface = Interface::Internal;
    mm.sender = agent_names::kMonitoring;
    mm.receiver = d.ok() ? agent_names::kSupervisor : agent_names::kUserWeighting;
    mm.kind = "monitor_decision";
    mm.body = d.to_json();
    mm.text = d.to_string();
    publish(std::move(mm), snap);
  }

  snap.rates_mbps = state_.rates_mbps;
  snap.z = z_;
  snap.alpha = alpha_;
  snap.mu = weighting_.mu;
  snap.lambda = penalties_.lambda;
  snap.violation_mbps = v;
  snap.decision = std::move(d);
  snap.converged = converged_;
  snap.convergence_loop = convergence_loop_;
  snap.solver_iterations = state_.iterations;
  snap.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  latest_ = snap;
  return snap;
}

CoordinationResult Coordinator::run_until_converged(int loop_cap) {
  const int cap = loop_cap > 0 ? loop_cap : config_.agents.loop_cap;
  CoordinationResult r;
  while (episode_loop_ < cap) {
    r.trace.push_back(step());
    if (converged_) break;
  }
  r.loops = static_cast<int>(r.trace.size());
  r.converged = converged_;
  r.convergence_loop = convergence_loop_;
  if (!converged_) {
    const auto& last = latest_;
    std::vector<int> users;
    for (int k = 0; k < static_cast<int>(last.violation_mbps.size()); ++k)
      if (last.violation_mbps[k] > config_.agents.viol_tol_mbps) r.violated_users.push_back(k + 1);
    for (int u : r.violated_users) users.push_back(u - 1);
    r.report = users.empty() ? "not converged after " + std::to_string(cap) + " loops"
                             : "minimum rates not met after " + std::to_string(cap) + " loops for users " +
                                   join_users(users);
  }
  return r;
}

}  // namespace cfran
