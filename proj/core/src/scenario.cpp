#include "cfran/scenario.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cfran/error.hpp"

namespace cfran {

namespace {

constexpr const char* kSchema = "cfran.scenario.v1";

using json = nlohmann::json;

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be reported as unknown fields.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw FormatError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string field(const char* key) const { return path_ + "." + key; }

  bool has(const char* key) const { return j_.contains(key); }

  void get(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw FormatError(field(key) + ": expected an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) throw FormatError(field(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw FormatError(field(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw FormatError(field(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw FormatError(field(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  /// Empty object when absent.
  Reader child(const char* key) {
    static const json empty = json::object();
    const json* v = take(key);
    return Reader(v ? *v : empty, field(key));
  }
  const json* raw(const char* key) { return take(key); }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw FormatError(path_ + "." + key + ": unknown field");
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw FormatError(field + ": " + what);
}

template <class F>
void rethrow_as_format(const std::string& path, F&& f) {
  try {
    f();
  } catch (const InvalidArgument& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string scope_name(InterferenceScope s) { return s == InterferenceScope::AllUsers ? "all_users" : "served_users"; }

// ---------------------------------------------------------------------------

json solver_json(const SolverConfig& s) {
  return {{"rate_tol_mbps", s.rate_tol_mbps},
          {"patience", s.patience},
          {"max_iters", s.max_iters},
          {"bisection_rel_tol", s.bisection_rel_tol},
          {"bisection_max_iters", s.bisection_max_iters},
          {"bracket_max_expansions", s.bracket_max_expansions},
          {"r_floor", s.r_floor},
          {"alpha_floor", s.alpha_floor},
          {"alpha_cap", s.alpha_cap},
          {"scope", scope_name(s.scope)}};
}

SolverConfig read_solver(Reader r, SolverConfig s) {
  r.get("rate_tol_mbps", s.rate_tol_mbps);
  r.get("patience", s.patience);
  r.get("max_iters", s.max_iters);
  r.get("bisection_rel_tol", s.bisection_rel_tol);
  r.get("bisection_max_iters", s.bisection_max_iters);
  r.get("bracket_max_expansions", s.bracket_max_expansions);
  r.get("r_floor", s.r_floor);
  r.get("alpha_floor", s.alpha_floor);
  r.get("alpha_cap", s.alpha_cap);
  std::string scope = scope_name(s.scope);
  r.get("scope", scope);
  check(scope == "all_users" || scope == "served_users", r.field("scope"), "expected all_users or served_users");
  s.scope = scope == "all_users" ? InterferenceScope::AllUsers : InterferenceScope::ServedUsers;
  check(s.rate_tol_mbps > 0.0, r.field("rate_tol_mbps"), "must be positive");
  check(s.patience >= 1, r.field("patience"), "must be >= 1");
  check(s.max_iters >= 1, r.field("max_iters"), "must be >= 1");
  check(s.alpha_floor > 0.0 && s.alpha_cap > s.alpha_floor, r.field("alpha_cap"), "need 0 < alpha_floor < alpha_cap");
  r.finish();
  return s;
}

}  // namespace

TrainingConfig::TrainingConfig() {
  hyper.lr_policy = 3e-4;
  hyper.lr_critic = 3e-4;
  env.solver.rate_tol_mbps = 0.1;
  env.solver.max_iters = 100;
}

void Scenario::validate() const { from_json(to_json()); }

nlohmann::json Scenario::to_json() const {
  const auto& n = network;
  json sched = json::array();
  for (const auto& s : schedule) sched.push_back({{"loop", s.loop}, {"intent", s.text}});
  const auto& h = training.hyper;
  const auto& e = training.env;
  const auto& a = coordination.agents;
  return {
      {"schema", kSchema},
      {"name", name},
      {"loops", loops},
      {"network",
       {{"topology_seed", n.topology_seed},
        {"channel_seed", n.channel_seed},
        {"num_orus", n.num_orus},
        {"num_users", n.num_users},
        {"area_side_m", n.area_side_m},
        {"l_max", n.l_max},
        {"p_max_w", n.p_max_w},
        {"antennas", {{"n_t", n.antennas.n_t}, {"n_r", n.antennas.n_r}, {"n_s", n.antennas.n_s}}},
        {"pathloss",
         {{"pl0_db", n.pathloss.pl0_db},
          {"d0_m", n.pathloss.d0_m},
          {"exponent", n.pathloss.exponent},
          {"d_min_m", n.pathloss.d_min_m},
          {"shadowing", n.pathloss.shadowing},
          {"shadowing_std_db", n.pathloss.shadowing_std_db},
          {"shadowing_seed", n.pathloss.shadowing_seed}}},
        {"noise",
         {{"density_dbm_per_hz", n.noise.density_dbm_per_hz},
          {"noise_figure_db", n.noise.noise_figure_db},
          {"bandwidth_hz", n.noise.bandwidth_hz}}}}},
      {"solver", solver_json(solver)},
      {"training",
       {{"episodes", training.episodes},
        {"seed", training.seed},
        {"intent", training.intent},
        {"hyper",
         {{"gamma", h.gamma},
          {"clip_eps", h.clip_eps},
          {"c1", h.c1},
          {"c2", h.c2},
          {"lr_policy", h.lr_policy},
          {"lr_critic", h.lr_critic},
          {"epochs", h.epochs},
          {"episode_length", h.episode_length},
          {"policy_hidden", h.policy_hidden},
          {"critic_hidden", h.critic_hidden},
          {"standardize_advantages", h.standardize_advantages}}},
        {"env",
         {{"lambda_min", e.lambda_min},
          {"lambda_max", e.lambda_max},
          {"randomize_lambda", e.randomize_lambda},
          {"random_start_prob", e.random_start_prob},
          {"solver", solver_json(e.solver)}}}}},
      {"agents",
       {{"window", a.window},
        {"alpha_high", a.alpha_high},
        {"boost_factor", a.boost_factor},
        {"lambda_init", a.lambda_init},
        {"lambda_growth", a.lambda_growth},
        {"lambda_max", a.lambda_max},
        {"viol_tol_mbps", a.viol_tol_mbps},
        {"stall_tol_mbps", a.stall_tol_mbps},
        {"stall_min_entries", a.stall_min_entries},
        {"patience", a.patience},
        {"loop_cap", a.loop_cap},
        {"dual_step", a.dual_step}}},
      {"drl_ga", {{"mu_step", coordination.ga_mu_step}, {"lambda_step", coordination.ga_lambda_step}}},
      {"memory",
       {{"enabled", memory.enabled},
        {"d_emb", memory.store.d_emb},
        {"sim_threshold", memory.store.sim_threshold},
        {"dedup_tol", memory.store.dedup_tol},
        {"reference_rate_mbps", memory.store.reference_rate_mbps},
        {"corpus_size", memory.corpus_size},
        {"corpus_seed", memory.corpus_seed},
        {"epochs", memory.epochs},
        {"step", memory.step},
        {"seed", memory.seed}}},
      {"reasoner",
       {{"backend", reasoner.backend},
        {"host", reasoner.host},
        {"port", reasoner.port},
        {"path", reasoner.path},
        {"timeout_ms", reasoner.timeout_ms}}},
      {"schedule", sched},
  };
}

Scenario Scenario::from_json(const nlohmann::json& j) {
  Reader root(j, "scenario");
  std::string schema;
  root.get("schema", schema);
  check(schema == kSchema, root.field("schema"), std::string("expected \"") + kSchema + "\"");

  Scenario s;
  root.get("name", s.name);
  root.get("loops", s.loops);
  check(s.loops >= 1, root.field("loops"), "must be >= 1");

  {
    Reader r = root.child("network");
    auto& n = s.network;
    r.get("topology_seed", n.topology_seed);
    r.get("channel_seed", n.channel_seed);
    r.get("num_orus", n.num_orus);
    r.get("num_users", n.num_users);
    r.get("area_side_m", n.area_side_m);
    r.get("l_max", n.l_max);
    r.get("p_max_w", n.p_max_w);
    check(n.num_orus >= 1, r.field("num_orus"), "must be >= 1");
    check(n.num_users >= 1, r.field("num_users"), "must be >= 1");
    check(n.area_side_m > 0.0, r.field("area_side_m"), "must be positive");
    check(n.l_max >= 1, r.field("l_max"), "must be >= 1");
    check(n.p_max_w > 0.0, r.field("p_max_w"), "must be positive");
    {
      Reader ra = r.child("antennas");
      ra.get("n_t", n.antennas.n_t);
      ra.get("n_r", n.antennas.n_r);
      ra.get("n_s", n.antennas.n_s);
      ra.finish();
      rethrow_as_format(ra.path(), [&] { n.antennas.validate(); });
    }
    {
      Reader rp = r.child("pathloss");
      auto& p = n.pathloss;
      rp.get("pl0_db", p.pl0_db);
      rp.get("d0_m", p.d0_m);
      rp.get("exponent", p.exponent);
      rp.get("d_min_m", p.d_min_m);
      rp.get("shadowing", p.shadowing);
      rp.get("shadowing_std_db", p.shadowing_std_db);
      rp.get("shadowing_seed", p.shadowing_seed);
      rp.finish();
      rethrow_as_format(rp.path(), [&] { p.validate(); });
    }
    {
      Reader rn = r.child("noise");
      rn.get("density_dbm_per_hz", n.noise.density_dbm_per_hz);
      rn.get("noise_figure_db", n.noise.noise_figure_db);
      rn.get("bandwidth_hz", n.noise.bandwidth_hz);
      check(n.noise.bandwidth_hz > 0.0, rn.field("bandwidth_hz"), "must be positive");
      rn.finish();
    }
    r.finish();
  }

  s.solver = read_solver(root.child("solver"), s.solver);

  {
    Reader r = root.child("training");
    auto& t = s.training;
    r.get("episodes", t.episodes);
    r.get("seed", t.seed);
    r.get("intent", t.intent);
    check(t.episodes >= 0, r.field("episodes"), "must be >= 0");
    {
      Reader rh = r.child("hyper");
      auto& h = t.hyper;
      rh.get("gamma", h.gamma);
      rh.get("clip_eps", h.clip_eps);
      rh.get("c1", h.c1);
      rh.get("c2", h.c2);
      rh.get("lr_policy", h.lr_policy);
      rh.get("lr_critic", h.lr_critic);
      rh.get("epochs", h.epochs);
      rh.get("episode_length", h.episode_length);
      rh.get("policy_hidden", h.policy_hidden);
      rh.get("critic_hidden", h.critic_hidden);
      rh.get("standardize_advantages", h.standardize_advantages);
      rh.finish();
      rethrow_as_format(rh.path(), [&] { h.validate(); });
    }
    {
      Reader re = r.child("env");
      auto& e = t.env;
      re.get("lambda_min", e.lambda_min);
      re.get("lambda_max", e.lambda_max);
      re.get("randomize_lambda", e.randomize_lambda);
      re.get("random_start_prob", e.random_start_prob);
      check(e.lambda_min >= 0.0 && e.lambda_max >= e.lambda_min, re.field("lambda_max"),
            "need 0 <= lambda_min <= lambda_max");
      check(e.random_start_prob >= 0.0 && e.random_start_prob <= 1.0, re.field("random_start_prob"),
            "must lie in [0, 1]");
      e.solver = read_solver(re.child("solver"), e.solver);
      re.finish();
    }
    t.env.episode_length = t.hyper.episode_length;
    t.env.l_max = s.network.l_max;
    r.finish();
  }

  {
    Reader r = root.child("agents");
    auto& a = s.coordination.agents;
    r.get("window", a.window);
    r.get("alpha_high", a.alpha_high);
    r.get("boost_factor", a.boost_factor);
    r.get("lambda_init", a.lambda_init);
    r.get("lambda_growth", a.lambda_growth);
    r.get("lambda_max", a.lambda_max);
    r.get("viol_tol_mbps", a.viol_tol_mbps);
    r.get("stall_tol_mbps", a.stall_tol_mbps);
    r.get("stall_min_entries", a.stall_min_entries);
    r.get("patience", a.patience);
    r.get("loop_cap", a.loop_cap);
    r.get("dual_step", a.dual_step);
    r.finish();
    rethrow_as_format(r.path(), [&] { a.validate(); });
  }
  {
    Reader r = root.child("drl_ga");
    r.get("mu_step", s.coordination.ga_mu_step);
    r.get("lambda_step", s.coordination.ga_lambda_step);
    check(s.coordination.ga_mu_step > 0.0, r.field("mu_step"), "must be positive");
    check(s.coordination.ga_lambda_step > 0.0, r.field("lambda_step"), "must be positive");
    r.finish();
  }
  {
    Reader r = root.child("memory");
    auto& m = s.memory;
    r.get("enabled", m.enabled);
    r.get("d_emb", m.store.d_emb);
    r.get("sim_threshold", m.store.sim_threshold);
    r.get("dedup_tol", m.store.dedup_tol);
    r.get("reference_rate_mbps", m.store.reference_rate_mbps);
    r.get("corpus_size", m.corpus_size);
    r.get("corpus_seed", m.corpus_seed);
    r.get("epochs", m.epochs);
    r.get("step", m.step);
    r.get("seed", m.seed);
    rethrow_as_format(r.path(), [&] { m.store.validate(); });
    const int in = s.network.num_users * (s.network.num_orus + 1);
    check(m.store.d_emb < in, r.field("d_emb"), "must be below K (L + 1) = " + std::to_string(in));
    check(m.corpus_size >= m.store.d_emb, r.field("corpus_size"), "must be >= d_emb");
    check(m.epochs >= 0, r.field("epochs"), "must be >= 0");
    check(m.step > 0.0, r.field("step"), "must be positive");
    r.finish();
  }
  {
    Reader r = root.child("reasoner");
    auto& q = s.reasoner;
    r.get("backend", q.backend);
    r.get("host", q.host);
    r.get("port", q.port);
    r.get("path", q.path);
    r.get("timeout_ms", q.timeout_ms);
    check(q.backend == "grammar" || q.backend == "remote", r.field("backend"), "expected grammar or remote");
    if (q.backend == "remote") check(q.port > 0 && q.port < 65536, r.field("port"), "must be a TCP port");
    check(q.timeout_ms > 0, r.field("timeout_ms"), "must be positive");
    r.finish();
  }

  if (const json* sched = root.raw("schedule")) {
    check(sched->is_array(), "scenario.schedule", "expected an array");
    int prev = -1;
    for (std::size_t i = 0; i < sched->size(); ++i) {
      Reader r((*sched)[i], "scenario.schedule[" + std::to_string(i) + "]");
      ScheduledIntent si;
      check(r.has("loop"), r.field("loop"), "missing");
      check(r.has("intent"), r.field("intent"), "missing");
      r.get("loop", si.loop);
      r.get("intent", si.text);
      check(si.loop > prev, r.field("loop"), "schedule loops must be strictly increasing");
      check(si.loop < s.loops, r.field("loop"), "beyond the scenario's " + std::to_string(s.loops) + " loops");
      prev = si.loop;
      r.finish();
      s.schedule.push_back(std::move(si));
    }
  }
  root.finish();
  return s;
}

std::string Scenario::hash() const {
  // FNV-1a, 64 bit
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_json().dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scenario " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return Scenario::from_json(j);
}

}  // namespace cfran
