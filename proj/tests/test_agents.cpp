#include <doctest.h>

#include <cmath>

#include "cfran/agents.hpp"
#include "cfran/error.hpp"

using namespace cfran;

namespace {

constexpr double kBandwidth = 20e6;

World small_world(int K = 3, int L = 4, std::uint64_t seed = 3, const MappoController* controller = nullptr) {
  World w;
  w.fading = compute_large_scale_fading(generate_topology(seed, L, K, 200.0), PathLossParams{});
  w.channels = draw_channels(w.fading, AntennaConfig{}, NoiseParams{}, seed);
  w.controller = controller;
  return w;
}

ObjectiveSpec objective(UtilityKind u, std::vector<double> r_min, bool es = false) {
  ObjectiveSpec s;
  s.utility = u;
  s.energy_saving = es;
  s.r_min_mbps = std::move(r_min);
  sync_monitored(s);
  return s;
}

HistoryWindow history_of(const std::vector<std::vector<double>>& rates, const std::vector<double>& r_min) {
  HistoryWindow h(10);
  int loop = 0;
  for (const auto& r : rates) {
    HistoryEntry e;
    e.loop = loop++;
    e.rates_mbps = r;
    e.violation_mbps = violations_mbps(r, r_min);
    h.push(e);
  }
  return h;
}

}  // namespace

TEST_CASE("user weighting without constraints follows the marginal utility") {
  const AgentConfig agents;
  const SolverConfig solver;
  const std::vector<double> rates{10.0, 40.0, 80.0};

  auto ws = WeightingState::initial(3);
  const auto log_spec = UtilitySpec::uniform(UtilityKind::SumLogRate, 3, 0.0, 1.0);
  const auto w = user_weighting_step(log_spec, rates, ws, nullptr, nullptr, agents, solver, kBandwidth);
  for (int k = 0; k < 3; ++k) {
    CHECK(w.mu[k] == 0.0);
    // d log r / dr with r in bit/s/Hz
    CHECK(w.alpha[k] == doctest::Approx(kBandwidth / (rates[k] * 1e6)).epsilon(1e-12));
  }
  CHECK_FALSE(w.from_memory);

  auto ws2 = WeightingState::initial(3);
  const auto sum_spec = UtilitySpec::uniform(UtilityKind::SumRate, 3, 0.0, 1.0);
  const auto w2 = user_weighting_step(sum_spec, rates, ws2, nullptr, nullptr, agents, solver, kBandwidth);
  CHECK(w2.alpha == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("user weighting raises mu by the relative shortfall only") {
  AgentConfig agents;
  agents.dual_step = 0.05;
  auto spec = UtilitySpec::uniform(UtilityKind::SumRate, 3, 0.0, 1.0);
  spec.r_min_mbps = {50.0, 50.0, 0.0};
  auto ws = WeightingState::initial(3);
  ws.mu = {0.2, 0.2, 0.0};

  const auto w = user_weighting_step(spec, {40.0, 70.0, 5.0}, ws, nullptr, nullptr, agents, {}, kBandwidth);
  CHECK(w.mu[0] == doctest::Approx(0.2 + 0.05 * 10.0 / 50.0));
  CHECK(w.mu[1] == doctest::Approx(0.2));  // satisfied: unchanged, not lowered
  CHECK(w.mu[2] == 0.0);
  CHECK(w.alpha[0] == doctest::Approx(1.0 + w.mu[0]));
  CHECK(w.alpha[1] == doctest::Approx(1.2));
  CHECK(ws.mu == w.mu);
}

TEST_CASE("boost requests multiply the weight") {
  AgentConfig agents;
  agents.boost_factor = 1.5;
  auto spec = UtilitySpec::uniform(UtilityKind::SumRate, 2, 0.0, 1.0);
  spec.r_min_mbps = {50.0, 0.0};
  auto ws = WeightingState::initial(2);
  MonitorDecision d;
  d.violated = {0};
  d.actions = {{MonitorActionKind::BoostWeight, 0, false}};

  const auto w1 = user_weighting_step(spec, {50.0, 5.0}, ws, &d, nullptr, agents, {}, kBandwidth);
  CHECK(w1.alpha[0] == doctest::Approx(1.5));
  CHECK(w1.alpha[1] == doctest::Approx(1.0));
  const auto w2 = user_weighting_step(spec, {50.0, 5.0}, ws, &d, nullptr, agents, {}, kBandwidth);
  CHECK(w2.alpha[0] == doctest::Approx(2.25));
  // boost persists without new requests
  const auto w3 = user_weighting_step(spec, {50.0, 5.0}, ws, nullptr, nullptr, agents, {}, kBandwidth);
  CHECK(w3.alpha[0] == doctest::Approx(2.25));
}

TEST_CASE("retrieved experience passes alpha through") {
  const auto spec = UtilitySpec::uniform(UtilityKind::SumRate, 3, 0.0, 1.0);
  auto ws = WeightingState::initial(3);
  ws.boost = {3.0, 1.0, 1.0};
  Experience e;
  e.alpha = {3.5, 0.5, 1.0};
  e.lambda = {4.0, 1.0, 1.0};
  const auto w = user_weighting_step(spec, {10.0, 20.0, 30.0}, ws, nullptr, &e, {}, {}, kBandwidth);
  CHECK(w.from_memory);
  CHECK(w.alpha == e.alpha);
  CHECK(w.mu == std::vector<double>{2.5, 0.0, 0.0});
  CHECK(ws.boost == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("penalties grow geometrically up to the cap") {
  auto p = PenaltyState::uniform(2, 1.0, 100.0);
  p.raise(1, 2.0);
  CHECK(p.lambda == std::vector<double>{1.0, 2.0});
  for (int i = 0; i < 10; ++i) p.raise(1, 2.0);
  CHECK(p.lambda[1] == 100.0);
  CHECK_THROWS_AS(p.raise(2, 2.0), InvalidArgument);
  CHECK_THROWS_AS(PenaltyState::uniform(2, 200.0, 100.0), InvalidArgument);
}

TEST_CASE("history window") {
  HistoryWindow h(3);
  CHECK_THROWS_AS(h.latest(), InvalidArgument);
  for (int i = 0; i < 5; ++i) h.push({i, {0.0}, {}, {}, {}, {double(i)}});
  CHECK(h.size() == 3);
  CHECK(h.entries().front().loop == 2);
  CHECK(h.rate_range(0) == 2.0);
  CHECK_THROWS_AS(h.push({4, {0.0}, {}, {}, {}, {0.0}}), InvalidArgument);
  CHECK_THROWS_AS(HistoryWindow(0), InvalidArgument);
}

TEST_CASE("monitoring rule table") {
  AgentConfig c;
  const auto spec = objective(UtilityKind::SumRate, {50.0, 0.0});
  const std::vector<double> low_alpha{1.0, 1.0};
  const std::vector<double> lambda{1.0, 1.0};

  SUBCASE("satisfied within tolerance") {
    const auto h = history_of({{49.95, 0.0}}, spec.r_min_mbps);
    const auto d = monitoring_step(h, low_alpha, lambda, spec, c);
    CHECK(d.ok());
    CHECK(d.to_string() == "ok");
  }
  SUBCASE("unconstrained users are ignored") {
    const auto h = history_of({{60.0, 0.0}}, spec.r_min_mbps);
    CHECK(monitoring_step(h, low_alpha, lambda, spec, c).ok());
  }
  SUBCASE("moving violation below alpha_high boosts") {
    const auto h = history_of({{30.0, 1.0}, {35.0, 1.0}, {40.0, 1.0}}, spec.r_min_mbps);
    const auto d = monitoring_step(h, low_alpha, lambda, spec, c);
    CHECK(d.violated == std::vector<int>{0});
    CHECK(d.boosts(0));
    CHECK(d.to_string() == "boost_weight(1)");
  }
  SUBCASE("alpha at alpha_high raises the penalty") {
    const auto h = history_of({{40.0, 1.0}}, spec.r_min_mbps);
    const auto d = monitoring_step(h, {c.alpha_high, 1.0}, lambda, spec, c);
    CHECK(d.raises(0));
    CHECK(d.to_string() == "raise_penalty(1)");
  }
  SUBCASE("stall raises the penalty") {
    const auto h = history_of({{40.0, 1.0}, {40.01, 1.0}, {40.02, 1.0}}, spec.r_min_mbps);
    const auto d = monitoring_step(h, low_alpha, lambda, spec, c);
    REQUIRE(d.actions.size() == 1);
    CHECK(d.actions[0].stalled);
    CHECK(d.raises(0));
  }
  SUBCASE("too few entries cannot stall") {
    const auto h = history_of({{40.0, 1.0}, {40.0, 1.0}}, spec.r_min_mbps);
    CHECK(monitoring_step(h, low_alpha, lambda, spec, c).boosts(0));
  }
  SUBCASE("stall with the penalty at its cap boosts again") {
    const auto h = history_of({{40.0, 1.0}, {40.0, 1.0}, {40.0, 1.0}}, spec.r_min_mbps);
    CHECK(monitoring_step(h, low_alpha, {c.lambda_max, 1.0}, spec, c).boosts(0));
    CHECK(monitoring_step(h, {c.alpha_high, 1.0}, {c.lambda_max, 1.0}, spec, c).raises(0));
  }
  SUBCASE("decision json") {
    const auto h = history_of({{40.0, 1.0}}, spec.r_min_mbps);
    const auto j = monitoring_step(h, low_alpha, lambda, spec, c).to_json();
    CHECK(j["ok"] == false);
    CHECK(j["violated"] == nlohmann::json::array({1}));
    CHECK(j["actions"][0]["action"] == "boost_weight");
    CHECK(j["actions"][0]["user"] == 1);
  }
}

TEST_CASE("O-RU management") {
  const World w = small_world();
  const int L = w.fading.num_orus();
  PenaltyState p = PenaltyState::uniform(3, 1.0, 100.0);
  ManagementInput in;
  in.fading = &w.fading;
  in.rates_mbps = {10.0, 10.0, 10.0};
  in.z_prev.assign(static_cast<std::size_t>(L), 1);

  CHECK(oru_management_step(objective(UtilityKind::SumRate, {0, 0, 0}), in, p, nullptr, {}) ==
        ActivationVector(static_cast<std::size_t>(L), 1));

  const auto es = objective(UtilityKind::SumRate, {0, 30, 0}, true);
  CHECK_THROWS_WITH_AS(oru_management_step(es, in, p, nullptr, {}),
                       doctest::Contains("trained activation controller"), InvalidArgument);

  MappoController ctl(3, L, w.fading, MappoHyper{}, 11);
  in.controller = &ctl;
  MonitorDecision d;
  d.violated = {1};
  d.actions = {{MonitorActionKind::RaisePenalty, 1, true}};
  const auto z = oru_management_step(es, in, p, &d, {});
  CHECK(p.lambda == std::vector<double>{1.0, 2.0, 1.0});
  const auto v = normalized_violations(in.rates_mbps, es.r_min_mbps);
  CHECK(z == ctl.infer(build_observations(w.fading, v, p.lambda, in.z_prev)));
}

TEST_CASE("unconstrained intent converges on the first check") {
  MessageBus bus;
  Coordinator c(small_world(), {}, &bus);
  c.start_intent("Maximize the sum rate.", objective(UtilityKind::SumRate, {0, 0, 0}));
  const auto r = c.run_until_converged();
  CHECK(r.converged);
  CHECK(r.convergence_loop == 1);
  CHECK(r.loops == AgentConfig{}.patience);
  CHECK(r.report.empty());
  for (const auto& s : r.trace) CHECK(s.decision.ok());

  // weights, activation, rates and the monitor verdict each loop, in order
  REQUIRE(bus.size() == 4 * r.trace.size());
  const auto msgs = bus.messages();
  for (std::size_t i = 0; i < msgs.size(); i += 4) {
    CHECK(msgs[i].kind == "priority_weights");
    CHECK(msgs[i + 1].kind == "activation");
    CHECK(msgs[i + 2].kind == "rates");
    CHECK(msgs[i + 3].kind == "monitor_decision");
    CHECK(msgs[i + 3].receiver == agent_names::kSupervisor);
  }
  std::size_t in_snapshots = 0;
  for (const auto& s : r.trace) in_snapshots += s.messages.size();
  CHECK(in_snapshots == bus.size());
}

TEST_CASE("state is frozen after convergence") {
  Coordinator c(small_world(), {});
  c.start_intent("x", objective(UtilityKind::SumLogRate, {0, 0, 0}));
  c.run_until_converged();
  const auto before = c.latest();
  const auto after = c.step();
  CHECK(after.solver_iterations == 0);
  CHECK(after.rates_mbps == before.rates_mbps);
  CHECK(after.alpha == before.alpha);
  CHECK(after.messages.size() == 2);  // only rates and the verdict
  CHECK(after.converged);
}

TEST_CASE("infeasible minimum rate hits the loop cap with a report") {
  CoordinatorConfig cfg;
  cfg.agents.loop_cap = 6;
  Coordinator c(small_world(), cfg);
  c.start_intent("x", objective(UtilityKind::SumRate, {0, 1e6, 0}));
  const auto r = c.run_until_converged();
  CHECK_FALSE(r.converged);
  CHECK(r.loops == 6);
  CHECK(r.violated_users == std::vector<int>{2});
  CHECK(r.report == "minimum rates not met after 6 loops for users 2");
  // every loop after the first boosted user 2
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i].alpha[1] > r.trace[i - 1].alpha[1]);
}

TEST_CASE("coordination is deterministic and penalties never fall") {
  const World w0 = small_world(3, 4, 5);
  MappoController ctl(3, 4, w0.fading, MappoHyper{}, 2);
  const auto es = objective(UtilityKind::SumRate, {0, 0, 400.0}, true);
  CoordinatorConfig cfg;
  cfg.agents.loop_cap = 15;

  auto run = [&] {
    Coordinator c(small_world(3, 4, 5, &ctl), cfg);
    c.start_intent("es", es);
    return c.run_until_converged();
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i)
    CHECK(a.trace[i].to_json(false).dump() == b.trace[i].to_json(false).dump());
  for (std::size_t i = 1; i < a.trace.size(); ++i)
    for (int k = 0; k < 3; ++k) CHECK(a.trace[i].lambda[k] >= a.trace[i - 1].lambda[k]);
}

TEST_CASE("energy saving without a controller is refused") {
  Coordinator c(small_world(), {});
  CHECK_THROWS_AS(c.start_intent("es", objective(UtilityKind::SumRate, {0, 0, 10}, true)), InvalidArgument);
}

TEST_CASE("converged episodes are stored once and retrieved on rerun") {
  const World w = small_world();
  std::vector<VectorXd> corpus;
  for (int s = 0; s < 40; ++s) {
    const auto f = compute_large_scale_fading(generate_topology(100 + s, 4, 3, 200.0), PathLossParams{});
    corpus.push_back(raw_features(f, {0.0, 60.0 * (s % 3), 0.0}));
  }
  const auto ae = train_autoencoder(corpus, 3, 4, 4, 200).model;
  MemoryStore store;
  MessageBus bus;
  Coordinator c(w, {}, &bus, &store, &ae);
  const auto spec = objective(UtilityKind::SumRate, {0, 0, 60.0});

  c.start_intent("guarantee", spec);
  const auto cold = c.run_until_converged();
  REQUIRE(cold.converged);
  c.step();
  c.step();
  CHECK(store.size() == 1);
  int stored = 0;
  for (const auto& s : cold.trace) stored += s.stored_to_memory ? 1 : 0;
  CHECK(stored == 1);
  CHECK(store.entries()[0].alpha == c.latest().alpha);
  CHECK(store.entries()[0].loops_to_converge == cold.convergence_loop);

  c.start_intent("guarantee", spec);
  const auto warm = c.run_until_converged();
  REQUIRE(warm.converged);
  REQUIRE(warm.trace.front().memory_hit.has_value());
  CHECK(warm.trace.front().memory_hit->similarity == doctest::Approx(1.0));
  CHECK(warm.trace.front().alpha == store.entries()[0].alpha);
  CHECK(warm.convergence_loop == 1);
  // same kind and key: deduplicated
  CHECK(store.size() == 1);
  CHECK(warm.trace.front().to_json()["memory_hit"]["stored_loops"] == cold.convergence_loop);
}

TEST_CASE("DRL+GA baseline never consults memory or sends verdicts") {
  const World w = small_world();
  std::vector<VectorXd> corpus;
  for (int s = 0; s < 20; ++s)
    corpus.push_back(raw_features(compute_large_scale_fading(generate_topology(200 + s, 4, 3, 200.0), PathLossParams{}),
                                  {0.0, 0.0, 10.0 * s}));
  const auto ae = train_autoencoder(corpus, 3, 4, 4, 50).model;
  MemoryStore store;
  CoordinatorConfig cfg;
  cfg.mode = ControlMode::DrlGa;
  cfg.agents.loop_cap = 40;
  Coordinator c(w, cfg, nullptr, &store, &ae);
  c.start_intent("x", objective(UtilityKind::SumRate, {0, 0, 60.0}));
  const auto r = c.run_until_converged();
  CHECK(store.size() == 0);
  for (const auto& s : r.trace) {
    CHECK(s.decision.actions.empty());
    for (const auto& m : s.messages) CHECK(m.kind != "monitor_decision");
  }
  CHECK(to_string(ControlMode::DrlGa) == "drl_ga");
}

TEST_CASE("snapshot json") {
  Coordinator c(small_world(), {});
  c.start_intent("Maximize the sum rate.", objective(UtilityKind::SumRate, {0, 0, 0}));
  const auto s = c.step();
  const auto j = s.to_json();
  CHECK(j["schema"] == "cfran.snapshot.v1");
  CHECK(j["loop"] == 0);
  CHECK(j["episode_loop"] == 1);
  CHECK(j["active"] == 4);
  CHECK(j["memory_hit"].is_null());
  CHECK(j.contains("wall_ms"));
  CHECK_FALSE(s.to_json(false).contains("wall_ms"));
  CHECK(j["objective"]["schema"] == "cfran.objective.v1");
}
