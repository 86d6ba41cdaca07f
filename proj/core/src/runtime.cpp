#include "cfran/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "cfran/activation_env.hpp"
#include "cfran/error.hpp"

namespace cfran {

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Proposed: return "proposed";
    case RunMode::DrlGa: return "drl_ga";
    case RunMode::Greedy: return "greedy";
    case RunMode::FullPower: return "full_power";
  }
  return "?";
}

RunMode run_mode_from_string(std::string_view text) {
  for (RunMode m : {RunMode::Proposed, RunMode::DrlGa, RunMode::Greedy, RunMode::FullPower})
    if (to_string(m) == text) return m;
  throw InvalidArgument("unknown mode '" + std::string(text) + "' (proposed, drl_ga, greedy, full_power)");
}

bool uses_controller(RunMode mode) { return mode == RunMode::Proposed || mode == RunMode::DrlGa; }

World build_world(const Scenario& s, const MappoController* controller) {
  const auto& n = s.network;
  const Topology t = generate_topology(n.topology_seed, n.num_orus, n.num_users, n.area_side_m, n.antennas);
  World w;
  w.fading = compute_large_scale_fading(t, n.pathloss);
  w.channels = draw_channels(w.fading, n.antennas, n.noise, n.channel_seed);
  w.l_max = n.l_max;
  w.p_max_w = n.p_max_w;
  w.solver = s.solver;
  w.controller = controller;
  return w;
}

ObjectiveSpec training_objective(const Scenario& s) {
  GrammarBackend g;
  return g.translate(s.training.intent, s.network.num_users);
}

MappoController train_controller(const Scenario& s, const TrainProgress& progress) {
  const World w = build_world(s);
  ActivationEnvConfig ec = s.training.env;
  ec.episode_length = s.training.hyper.episode_length;
  ec.l_max = s.network.l_max;
  ActivationEnv env(w.fading, w.channels, training_objective(s).utility_spec(s.network.p_max_w), ec);
  MappoController c(s.network.num_users, s.network.num_orus, w.fading, s.training.hyper, s.training.seed);
  std::mt19937_64 rng(s.training.seed);
  for (int e = 0; e < s.training.episodes; ++e) {
    const auto stats = c.train_iteration(env, rng);
    if (progress) progress(e, stats);
  }
  return c;
}

AutoencoderTraining train_encoder(const Scenario& s) {
  const auto& n = s.network;
  const auto r_min = training_objective(s).r_min_mbps;
  std::vector<VectorXd> corpus;
  for (int i = 0; i < s.memory.corpus_size; ++i) {
    const auto t = generate_topology(s.memory.corpus_seed + static_cast<std::uint64_t>(i), n.num_orus, n.num_users,
                                     n.area_side_m, n.antennas);
    corpus.push_back(raw_features(compute_large_scale_fading(t, n.pathloss), r_min));
  }
  return train_autoencoder(corpus, n.num_users, n.num_orus, s.memory.store.d_emb, s.memory.epochs, s.memory.step,
                           s.memory.seed, s.memory.store.reference_rate_mbps);
}

std::unique_ptr<IntentBackend> make_backend(const ReasonerConfig& c) {
  if (c.backend == "remote") return std::make_unique<RemoteBackend>(c.host, c.port, c.path, c.timeout_ms);
  return std::make_unique<GrammarBackend>();
}

nlohmann::json RunRecord::to_json(bool with_timing) const {
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : snapshots) snaps.push_back(s.to_json(with_timing));
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(m.to_json());
  nlohmann::json j{{"schema", "cfran.run_record.v1"},
                   {"scenario", scenario_name},
                   {"scenario_hash", scenario_hash},
                   {"mode", std::string(to_string(mode))},
                   {"num_users", num_users},
                   {"num_orus", num_orus},
                   {"notes", notes},
                   {"snapshots", snaps},
                   {"messages", msgs}};
  if (with_timing) j["wall_ms"] = wall_ms;
  return j;
}

// ---------------------------------------------------------------------------
// greedy and full-power baselines

class ScenarioRunner::Baseline {
 public:
  Baseline(const World& world, RunMode mode, const AgentConfig& agents, MessageBus& bus, std::vector<std::string>& notes)
      : world_(world), mode_(mode), agents_(agents), bus_(bus), notes_(notes) {
    const int K = world_.fading.num_users();
    objective_.r_min_mbps.assign(static_cast<std::size_t>(K), 0.0);
    z_.assign(static_cast<std::size_t>(world_.fading.num_orus()), 1);
  }

  void start(const std::string& text, const ObjectiveSpec& spec) {
    objective_ = spec;
    intent_ = text;
    ++episode_;
    episode_loop_ = 0;
    ok_streak_ = 0;
    converged_ = false;
    convergence_loop_ = -1;
    noted_ = false;
    dirty_ = true;
    const int L = world_.fading.num_orus();
    if (mode_ == RunMode::FullPower || !spec.energy_saving) {
      z_.assign(static_cast<std::size_t>(L), 1);
      return;
    }
    z_.assign(static_cast<std::size_t>(L), 0);
    const auto& beta = world_.fading.beta;
    bool any = false;
    for (const auto& c : spec.monitored) {
      Eigen::Index best = 0;
      beta.row(c.user - 1).maxCoeff(&best);
      z_[static_cast<std::size_t>(best)] = 1;
      any = true;
    }
    if (!any) {
      Eigen::Index k = 0, l = 0;
      beta.maxCoeff(&k, &l);
      z_[static_cast<std::size_t>(l)] = 1;
    }
  }

  LoopSnapshot step(int loop) {
    const auto t0 = std::chrono::steady_clock::now();
    const int K = world_.fading.num_users();
    LoopSnapshot snap;
    snap.loop = loop;
    snap.episode = episode_;
    snap.episode_loop = ++episode_loop_;
    snap.intent = intent_;
    snap.objective = objective_;

    if (dirty_ || z_ != solved_z_) {
      const UtilitySpec u = objective_.utility_spec(world_.p_max_w);
      state_ = solve(world_.channels, associate_users(world_.fading, z_, world_.l_max), u, z_, world_.solver);
      solved_z_ = z_;
      dirty_ = false;
    } else {
      state_.iterations = 0;
    }
    const auto v = violations_mbps(state_.rates_mbps, objective_.r_min_mbps);

    auto send = [&](const char* sender, const char* receiver, const char* kind, std::string text,
                    nlohmann::json body) {
      Message m;
      m.loop = loop;
      m.iface = Interface::E2;
      m.sender = sender;
      m.receiver = receiver;
      m.kind = kind;
      m.text = std::move(text);
      m.body = std::move(body);
      m.seq = bus_.publish(m);
      snap.messages.push_back(std::move(m));
    };
    send(agent_names::kOruManagement, agent_names::kPrecoder, "activation",
         std::to_string(count_active(z_)) + "/" + std::to_string(z_.size()) + " O-RUs active", {{"z", z_}});
    send(agent_names::kPrecoder, agent_names::kMonitoring, "rates",
         "rates after " + std::to_string(state_.iterations) + " precoder passes",
         {{"rates_mbps", state_.rates_mbps}, {"iterations", state_.iterations}});

    MonitorDecision d;
    for (int k = 0; k < K; ++k)
      if (objective_.r_min_mbps[k] > 0.0 && v[k] > agents_.viol_tol_mbps) d.violated.push_back(k);

    snap.rates_mbps = state_.rates_mbps;
    snap.z = z_;
    snap.alpha = state_.alpha;
    snap.mu = state_.mu;
    snap.lambda.assign(static_cast<std::size_t>(K), 0.0);
    snap.violation_mbps = v;

    if (d.ok()) {
      if (ok_streak_++ == 0) streak_start_ = episode_loop_;
      if (ok_streak_ >= agents_.patience) {
        converged_ = true;
        convergence_loop_ = streak_start_;
      }
    } else {
      ok_streak_ = 0;
      converged_ = false;
      convergence_loop_ = -1;
      if (mode_ == RunMode::Greedy && objective_.energy_saving) grow(d.violated, loop);
    }
    snap.decision = std::move(d);
    snap.converged = converged_;
    snap.convergence_loop = convergence_loop_;
    snap.solver_iterations = state_.iterations;
    snap.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return snap;
  }

  LoopSnapshot initial() {
    LoopSnapshot snap;
    const int K = world_.fading.num_users();
    const UtilitySpec u = objective_.utility_spec(world_.p_max_w);
    state_ = solve(world_.channels, associate_users(world_.fading, z_, world_.l_max), u, z_, world_.solver);
    solved_z_ = z_;
    snap.objective = objective_;
    snap.rates_mbps = state_.rates_mbps;
    snap.z = z_;
    snap.alpha = state_.alpha;
    snap.mu = state_.mu;
    snap.lambda.assign(static_cast<std::size_t>(K), 0.0);
    snap.violation_mbps.assign(static_cast<std::size_t>(K), 0.0);
    snap.solver_iterations = state_.iterations;
    return snap;
  }

 private:
  // Next-largest-beta inactive O-RU for every violated user.
  void grow(const std::vector<int>& violated, int loop) {
    std::vector<int> stuck;
    for (int k : violated) {
      const auto row = world_.fading.beta.row(k);
      std::vector<int> order(static_cast<std::size_t>(row.size()));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row(a) > row(b); });
      const auto it = std::find_if(order.begin(), order.end(), [&](int l) { return z_[l] == 0; });
      if (it == order.end()) {
        stuck.push_back(k + 1);
      } else {
        z_[static_cast<std::size_t>(*it)] = 1;
      }
    }
    if (!stuck.empty() && !noted_) {
      std::string users;
      for (int u : stuck) users += (users.empty() ? "" : ", ") + std::to_string(u);
      notes_.push_back("loop " + std::to_string(loop) + ": greedy infeasible, users " + users +
                       " unmet with every O-RU active");
      noted_ = true;
    }
  }

  const World& world_;
  RunMode mode_;
  AgentConfig agents_;
  MessageBus& bus_;
  std::vector<std::string>& notes_;

  ObjectiveSpec objective_;
  std::string intent_;
  ActivationVector z_;
  ActivationVector solved_z_;
  PrecodingState state_;
  bool dirty_ = true;
  int episode_ = 0;
  int episode_loop_ = 0;
  int ok_streak_ = 0;
  int streak_start_ = -1;
  bool converged_ = false;
  int convergence_loop_ = -1;
  bool noted_ = false;
};

// ---------------------------------------------------------------------------

ScenarioRunner::ScenarioRunner(Scenario scenario, RunMode mode, RunContext context)
    : scenario_(std::move(scenario)), mode_(mode), context_(context) {
  scenario_.validate();
  if (context_.backend == nullptr) {
    own_backend_ = make_backend(scenario_.reasoner);
    context_.backend = own_backend_.get();
  }
  world_ = build_world(scenario_, context_.controller);
  record_.scenario_name = scenario_.name;
  record_.scenario_hash = scenario_.hash();
  record_.mode = mode_;
  record_.num_users = scenario_.network.num_users;
  record_.num_orus = scenario_.network.num_orus;

  if (uses_controller(mode_)) {
    CoordinatorConfig cfg = scenario_.coordination;
    cfg.mode = mode_ == RunMode::Proposed ? ControlMode::Proposed : ControlMode::DrlGa;
    coordinator_ = std::make_unique<Coordinator>(world_, cfg, &bus_, context_.memory, context_.encoder);
    latest_ = coordinator_->latest();
  } else {
    baseline_ = std::make_unique<Baseline>(world_, mode_, scenario_.coordination.agents, bus_, record_.notes);
    latest_ = baseline_->initial();
  }
}

ScenarioRunner::~ScenarioRunner() = default;

void ScenarioRunner::check_servable(const ObjectiveSpec& spec) const {
  if (spec.energy_saving && uses_controller(mode_) && context_.controller == nullptr)
    throw InvalidArgument("energy saving needs a trained activation controller; run `cfran train` first");
}

Translation ScenarioRunner::submit(const std::string& text) {
  std::lock_guard lock(mutex_);
  const Translation t = translate_intent({text, next_loop_}, *context_.backend, scenario_.network.num_users);
  check_servable(t.spec);
  queue_.emplace_back(text, t);
  return t;
}

void ScenarioRunner::apply_intent(const std::string& text, const Translation& t, int loop) {
  check_servable(t.spec);
  publish_supervisor_messages(t, {text, loop}, bus_);
  if (coordinator_) {
    coordinator_->start_intent(text, t.spec);
  } else {
    baseline_->start(text, t.spec);
  }
}

LoopSnapshot ScenarioRunner::step() {
  std::deque<std::pair<std::string, Translation>> pending;
  int loop = 0;
  {
    std::lock_guard lock(mutex_);
    loop = next_loop_;
    for (const auto& s : scenario_.schedule)
      if (s.loop == loop)
        pending.emplace_back(s.text,
                             translate_intent({s.text, loop}, *context_.backend, scenario_.network.num_users));
    while (!queue_.empty()) {
      pending.push_back(std::move(queue_.front()));
      queue_.pop_front();
    }
  }
  for (const auto& [text, t] : pending) apply_intent(text, t, loop);

  LoopSnapshot snap = coordinator_ ? coordinator_->step() : baseline_->step(loop);
  snap.loop = loop;
  std::vector<SnapshotHandler> handlers;
  {
    std::lock_guard lock(mutex_);
    latest_ = snap;
    record_.snapshots.push_back(snap);
    record_.wall_ms += snap.wall_ms;
    ++next_loop_;
    handlers = handlers_;
  }
  for (const auto& h : handlers) h(snap);
  return snap;
}

RunRecord ScenarioRunner::run() {
  while (!finished()) step();
  return record();
}

LoopSnapshot ScenarioRunner::latest() const {
  std::lock_guard lock(mutex_);
  return latest_;
}

int ScenarioRunner::next_loop() const {
  std::lock_guard lock(mutex_);
  return next_loop_;
}

void ScenarioRunner::on_snapshot(SnapshotHandler handler) {
  std::lock_guard lock(mutex_);
  handlers_.push_back(std::move(handler));
}

RunRecord ScenarioRunner::record() const {
  RunRecord r;
  {
    std::lock_guard lock(mutex_);
    r = record_;
  }
  r.messages = bus_.messages();
  return r;
}

RunRecord run_scenario(const Scenario& scenario, RunMode mode, RunContext context) {
  ScenarioRunner runner(scenario, mode, context);
  return runner.run();
}

// ---------------------------------------------------------------------------
// metrics

std::vector<EpisodeSummary> summarize(const RunRecord& record) {
  std::vector<EpisodeSummary> out;
  for (const auto& s : record.snapshots) {
    if (out.empty() || out.back().episode != s.episode) {
      EpisodeSummary e;
      e.episode = s.episode;
      e.intent = s.intent;
      e.first_loop = s.loop;
      e.memory_hit = s.memory_hit.has_value();
      out.push_back(e);
    }
    auto& e = out.back();
    ++e.loops;
    e.converged = s.converged;
    e.convergence_loop = s.convergence_loop;
    e.final_active = s.active_count();
    e.active_fraction = s.z.empty() ? 0.0 : static_cast<double>(e.final_active) / static_cast<double>(s.z.size());
    e.violated_users.clear();
    for (int k : s.decision.violated) e.violated_users.push_back(k + 1);
    e.min_margin_mbps = 0.0;
    bool first = true;
    for (std::size_t k = 0; k < s.rates_mbps.size(); ++k) {
      if (s.objective.r_min_mbps[k] <= 0.0) continue;
      const double m = s.rates_mbps[k] - s.objective.r_min_mbps[k];
      e.min_margin_mbps = first ? m : std::min(e.min_margin_mbps, m);
      first = false;
    }
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw FormatError("cannot write " + p.string());
  return out;
}

}  // namespace

std::vector<std::string> export_metrics(const RunRecord& record, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir + ": " + ec.message());
  const int K = record.num_users;
  std::vector<std::string> paths;

  {
    const fs::path p = fs::path(dir) / "loops.csv";
    auto out = open_out(p);
    out << "loop,episode,episode_loop,active,active_fraction,converged,convergence_loop,memory_hit,solver_iterations,"
           "decision";
    for (const char* col : {"r", "rmin", "alpha", "lambda", "viol"})
      for (int k = 1; k <= K; ++k) out << ',' << col << '_' << k;
    out << '\n';
    for (const auto& s : record.snapshots) {
      const int active = s.active_count();
      out << s.loop << ',' << s.episode << ',' << s.episode_loop << ',' << active << ','
          << num(s.z.empty() ? 0.0 : static_cast<double>(active) / static_cast<double>(s.z.size())) << ','
          << (s.converged ? 1 : 0) << ',' << s.convergence_loop << ',' << (s.memory_hit ? 1 : 0) << ','
          << s.solver_iterations << ',' << quote(s.decision.to_string());
      for (const auto* series : {&s.rates_mbps, &s.objective.r_min_mbps, &s.alpha, &s.lambda, &s.violation_mbps})
        for (int k = 0; k < K; ++k) out << ',' << num(series->at(static_cast<std::size_t>(k)));
      out << '\n';
    }
    paths.push_back(p.string());
  }
  {
    const fs::path p = fs::path(dir) / "summary.csv";
    auto out = open_out(p);
    out << "episode,intent,first_loop,loops,convergence_loop,converged,final_active,active_fraction,min_margin_mbps,"
           "violated_users,memory_hit\n";
    for (const auto& e : summarize(record)) {
      std::string users;
      for (int u : e.violated_users) users += (users.empty() ? "" : " ") + std::to_string(u);
      out << e.episode << ',' << quote(e.intent) << ',' << e.first_loop << ',' << e.loops << ',' << e.convergence_loop
          << ',' << (e.converged ? 1 : 0) << ',' << e.final_active << ',' << num(e.active_fraction) << ','
          << num(e.min_margin_mbps) << ',' << quote(users) << ',' << (e.memory_hit ? 1 : 0) << '\n';
    }
    paths.push_back(p.string());
  }
  {
    const fs::path p = fs::path(dir) / "snapshots.jsonl";
    auto out = open_out(p);
    for (const auto& s : record.snapshots) out << s.to_json(false).dump() << '\n';
    paths.push_back(p.string());
  }
  {
    const fs::path p = fs::path(dir) / "messages.jsonl";
    auto out = open_out(p);
    for (const auto& m : record.messages) out << m.to_json().dump() << '\n';
    paths.push_back(p.string());
  }
  {
    const fs::path p = fs::path(dir) / "timing.csv";
    auto out = open_out(p);
    out << "loop,wall_ms\n";
    for (const auto& s : record.snapshots) out << s.loop << ',' << num(s.wall_ms) << '\n';
    paths.push_back(p.string());
  }
  return paths;
}

}  // namespace cfran
