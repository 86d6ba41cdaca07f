// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: cfran_acceptance [name-substring ...] to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cfran/intent.hpp"
#include "cfran/memory.hpp"
#include "cfran/precoder.hpp"
#include "cfran/qlora.hpp"
#include "cfran/runtime.hpp"
#include "intent_paraphrases.hpp"
#include "mappo_oracles.hpp"
#include "precoder_fixtures.hpp"
#include "toy_env.hpp"

using namespace cfran;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double dbm_to_w(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

const double kPmax = dbm_to_w(30.0);

Scenario scenario(const char* name) { return load_scenario(std::string(CFRAN_SCENARIO_DIR) + "/" + name); }

// ---------------------------------------------------------------------------

Outcome wmmse_monotonicity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int passes = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int K = 2 + static_cast<int>(seed % 4);
    const int L = 4 + static_cast<int>(seed % 7);
    const auto inst = testing::make_instance(seed, L, K, 300.0, 3);
    const auto spec = UtilitySpec::uniform(UtilityKind::SumRate, K, 0.0, kPmax);
    auto s = initialize_state(inst.channels, inst.assoc, inst.z, kPmax);
    std::uniform_real_distribution<double> w(0.2, 5.0);
    for (auto& a : s.alpha) a = w(rng);
    double prev = weighted_rate_sum(s.alpha, s.rates);
    for (int it = 0; it < 30; ++it) {
      s = wmmse_iteration(s, inst.channels, inst.assoc, inst.z, spec);
      const double cur = weighted_rate_sum(s.alpha, s.rates);
      worst = std::max(worst, (prev - cur) / std::max(1e-300, std::abs(prev)));
      prev = cur;
      ++passes;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 60.0,
          fmt("20 instances (K<=5, L<=10), %d passes, worst relative drop %.2e (slack 1e-6), %.1f s", passes,
              std::max(0.0, worst), secs)};
}

Outcome power_feasibility() {
  double worst = 0.0;  // max of p_l / P_max - 1 over active O-RUs
  double off_power = 0.0;
  int checks = 0;
  auto check = [&](const std::vector<double>& p, const ActivationVector& z) {
    for (std::size_t l = 0; l < p.size(); ++l) {
      if (z[l]) {
        worst = std::max(worst, p[l] / kPmax - 1.0);
      } else {
        off_power = std::max(off_power, p[l]);
      }
      ++checks;
    }
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed + 500);
    const int K = 2 + static_cast<int>(seed % 4);
    const int L = 4 + static_cast<int>(seed % 7);
    auto inst = testing::make_instance(seed, L, K, 300.0, 3);
    // random activation with at least one O-RU on
    for (auto& zl : inst.z) zl = static_cast<int>(rng() % 3 != 0);
    inst.z[rng() % inst.z.size()] = 1;
    inst.assoc = associate_users(inst.fading, inst.z, 3);

    const auto spec = UtilitySpec::uniform(UtilityKind::SumRate, K, 0.0, kPmax);
    auto s = initialize_state(inst.channels, inst.assoc, inst.z, kPmax);
    check(oru_powers(s), inst.z);
    for (int it = 0; it < 30; ++it) {
      s = wmmse_iteration(s, inst.channels, inst.assoc, inst.z, spec);
      check(oru_powers(s), inst.z);
    }
    // full adaptive solves with minimum rates, every traced iteration
    std::vector<double> r_min(static_cast<std::size_t>(K), 0.0);
    r_min[0] = 20.0;
    for (auto kind : {UtilityKind::SumRate, UtilityKind::SumLogRate}) {
      UtilitySpec u = UtilitySpec::uniform(kind, K, 0.0, kPmax);
      u.r_min_mbps = r_min;
      SolveOptions opt;
      opt.trace = [&](const SolveTrace& t) { check(t.powers_w, inst.z); };
      const auto out = solve(inst.channels, inst.assoc, u, inst.z, SolverConfig{}, nullptr, opt);
      check(oru_powers(out), inst.z);
    }
  }
  return {worst <= 1e-6 && off_power == 0.0,
          fmt("%d per-O-RU checks, P_max = 30 dBm = %.3f W, worst excess %.2e (limit 1e-6), max power on inactive "
              "O-RUs %.1e W",
              checks, kPmax, std::max(0.0, worst), off_power)};
}

Outcome scalar_rate_oracle() {
  AntennaConfig one;
  one.n_t = one.n_r = one.n_s = 1;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto inst = testing::make_instance(seed, 1, 1, 100.0 + static_cast<double>(seed), 1, one);
    const auto s = initialize_state(inst.channels, inst.assoc, inst.z, kPmax);
    const auto rate = user_rates(effective_matrices(inst.channels, inst.assoc, s.V), 1, inst.channels.noise_variance);
    const std::complex<double> h = inst.channels.h(0, 0)(0, 0);
    const std::complex<double> v = s.v(0, 0)(0, 0);
    const double oracle = std::log2(1.0 + std::norm(h * v) / inst.channels.noise_variance);
    worst = std::max(worst, std::abs(rate[0] - oracle) / oracle);
  }
  return {worst <= 1e-12, fmt("100 draws, worst relative error %.2e (limit 1e-12)", worst)};
}

Outcome ppo_gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int clipped = 0;
  const auto probe = testing::make_grad_check_case(1, 0.2);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto e = testing::check_ppo_gradients(seed);
    worst = std::max({worst, e.clip, e.entropy, e.value});
    clipped += e.clipped_samples;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0 && probe.policy.params().size() <= 200 && probe.critic.params().size() <= 200,
          fmt("10 toy networks (%lld policy + %lld critic parameters), %d clipped samples, worst relative error "
              "%.2e (limit 1e-4), %.1f s",
              static_cast<long long>(probe.policy.params().size()), static_cast<long long>(probe.critic.params().size()),
              clipped, worst, secs)};
}

Outcome advantage_oracle() {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n;
  double worst = 0.0;
  int cases = 0;
  for (double gamma : {0.0, 0.5, 0.9})
    for (int T = 1; T <= 10; ++T)
      for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> r(static_cast<std::size_t>(T)), v(static_cast<std::size_t>(T + 1));
        for (auto& x : r) x = n(rng);
        for (auto& x : v) x = n(rng);
        const auto got = compute_advantages(r, v, gamma);
        const auto want = testing::brute_force_advantages(r, v, gamma);
        for (int t = 0; t < T; ++t) {
          worst = std::max(worst, std::abs(got.advantages[t] - want.advantages[t]) /
                                      std::max(1.0, std::abs(want.advantages[t])));
          worst = std::max(worst,
                           std::abs(got.returns[t] - want.returns[t]) / std::max(1.0, std::abs(want.returns[t])));
        }
        ++cases;
      }
  return {worst <= 1e-12, fmt("%d sequences, gamma in {0, 0.5, 0.9}, T <= 10, worst error %.2e (limit 1e-12)", cases,
                              worst)};
}

Outcome mappo_smoke() {
  const auto t0 = Clock::now();
  MappoHyper h;
  h.lr_policy = 3e-4;
  h.lr_critic = 3e-4;
  h.episode_length = 10;
  h.clip_eps = 0.2;
  int good = 0;
  std::string zs;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = testing::run_smoke(seed, 500, h);
    if (r.satisfied && r.active <= 1) ++good;
    zs += fmt("%s%d%d", zs.empty() ? "" : " ", r.z[0], r.z[1]);
  }
  const double secs = seconds_since(t0);
  return {good >= 9 && secs < 600.0,
          fmt("%d/10 seeds reach a feasible activation with <= 1 O-RU after 500 episodes (need 9), final z: %s, %.0f s",
              good, zs.c_str(), secs)};
}

Outcome desk_comparison() {
  const auto t0 = Clock::now();
  const Scenario s = scenario("desk.json");
  const MappoController c = train_controller(s);
  const double train_s = seconds_since(t0);
  struct Row {
    int active;
    bool met;
  };
  auto run = [&](RunMode m) {
    RunContext ctx;
    ctx.controller = &c;
    const auto sum = summarize(run_scenario(s, m, ctx)).back();
    return Row{sum.final_active, sum.violated_users.empty() && sum.min_margin_mbps >= -0.1};
  };
  const Row p = run(RunMode::Proposed);
  const Row g = run(RunMode::Greedy);
  const Row f = run(RunMode::FullPower);
  const double reduction = g.active > 0 ? 100.0 * (g.active - p.active) / g.active : 0.0;
  const bool ok = p.active <= g.active && g.active <= f.active && p.met && g.met && reduction >= 10.0;
  return {ok, fmt("L=%d K=%d, active O-RUs proposed %d / greedy %d / full_power %d, constraints met %s/%s, "
                  "reduction vs greedy %.1f%% (need >= 10%%), training %.0f s",
                  s.network.num_orus, s.network.num_users, p.active, g.active, f.active, p.met ? "yes" : "no",
                  g.met ? "yes" : "no", reduction, train_s)};
}

Outcome intent_translation() {
  GrammarBackend g;
  const std::string es = g.translate("Enter the energy-saving mode. Guarantee 50 Mbps for user 3.", 5).to_json().dump();
  const std::string um =
      g.translate("Maximize the sum of log-rates. No minimum rate requirements.", 5).to_json().dump();
  const bool es_ok = es == R"({"energy_saving":true,"monitor":[{"mbps":50.0,"user":3}],"r_min_mbps":[0.0,0.0,50.0,0.0,0.0],)"
                           R"("schema":"cfran.objective.v1","utility":"sum_rate"})";
  const bool um_ok = um == R"({"energy_saving":false,"monitor":[],"r_min_mbps":[0.0,0.0,0.0,0.0,0.0],)"
                           R"("schema":"cfran.objective.v1","utility":"sum_log_rate"})";
  int round_trips = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = testing::make_paraphrase(seed, 5);
    try {
      const auto got = g.translate(p.text, 5);
      if (got == p.expected && ObjectiveSpec::from_json(got.to_json()) == got) ++round_trips;
    } catch (const std::exception&) {
    }
  }
  return {es_ok && um_ok && round_trips == 20,
          fmt("energy-saving example %s, utility example %s, %d/20 paraphrases round-trip", es_ok ? "exact" : "differs",
              um_ok ? "exact" : "differs", round_trips)};
}

Outcome fig5_shape() {
  const auto t0 = Clock::now();
  const Scenario s = scenario("fig5.json");
  const MappoController c = train_controller(s);
  RunContext ctx;
  ctx.controller = &c;
  const RunRecord r = run_scenario(s, RunMode::Proposed, ctx);
  constexpr int kUser = 2;  // user 3
  constexpr double kRmin = 50.0;
  int es_at = -1, um_at = -1;
  for (std::size_t i = 1; i < s.schedule.size(); ++i) {
    if (s.schedule[i].loop == 10) es_at = 10;
    if (s.schedule[i].loop == 40) um_at = 40;
  }
  int dip = -1, recover = -1, boosts = 0, raises = 0;
  for (const auto& snap : r.snapshots) {
    if (snap.loop < es_at || snap.loop >= um_at) continue;
    const double rate = snap.rates_mbps[kUser];
    if (dip < 0 && rate < kRmin) dip = snap.loop;
    if (dip >= 0 && recover < 0 && rate >= kRmin - 0.1) recover = snap.loop;
    if (recover < 0) {
      boosts += snap.decision.boosts(kUser) ? 1 : 0;
      raises += snap.decision.raises(kUser) ? 1 : 0;
    }
  }
  const auto& at_um = r.snapshots[static_cast<std::size_t>(um_at)];
  const bool all_on = at_um.active_count() == s.network.num_orus;
  const bool ok = es_at == 10 && um_at == 40 && dip >= 0 && recover > dip && recover < um_at && boosts >= 1 && all_on;
  return {ok, fmt("r_3 below 50 Mbps at loop %d, back to >= 49.9 at loop %d, %d boost_weight + %d raise_penalty "
                  "before recovery, %d/%d O-RUs on at loop %d, %.0f s",
                  dip, recover, boosts, raises, at_um.active_count(), s.network.num_orus, um_at, seconds_since(t0))};
}

// Exhaustive cosine scan over the store's entries, written independently of
// MemoryStore::retrieve.
std::optional<std::size_t> nearest_oracle(const std::vector<Experience>& entries, const VectorXd& q,
                                          std::optional<IntentKind> kind, double threshold) {
  std::optional<std::size_t> best;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (kind && entries[i].kind != *kind) continue;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      dot += entries[i].key[j] * q[j];
      na += entries[i].key[j] * entries[i].key[j];
      nb += q[j] * q[j];
    }
    const double sim = dot / std::sqrt(na * nb);
    if (sim >= threshold && sim >= best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return best;
}

Outcome memory_warm_start() {
  const auto t0 = Clock::now();
  // retrieval oracle on 1000 random stores
  int agree = 0, hits = 0;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 1000; ++trial) {
    MemoryConfig cfg;
    cfg.d_emb = 3 + static_cast<int>(rng() % 14);
    const double thresholds[] = {-1.0, 0.0, 0.5, 0.9};
    cfg.sim_threshold = thresholds[rng() % 4];
    MemoryStore store(cfg);
    auto key = [&] {
      VectorXd v(cfg.d_emb);
      for (auto& x : v) x = n(rng);
      return v;
    };
    const int size = 1 + static_cast<int>(rng() % 64);
    for (int i = 0; i < size; ++i) {
      Experience e;
      e.key = key();
      e.alpha = {1.0};
      e.lambda = {1.0};
      e.kind = rng() % 2 ? IntentKind::EnergySaving : IntentKind::UtilityMaximization;
      store.store(e);
    }
    const VectorXd q = key();
    std::optional<IntentKind> kind;
    if (rng() % 2) kind = IntentKind::EnergySaving;
    const auto got = store.retrieve(q, kind);
    const auto want = nearest_oracle(store.entries(), q, kind, cfg.sim_threshold);
    if (got.has_value() == want.has_value() && (!got || got->index == *want)) ++agree;
    hits += got ? 1 : 0;
  }

  const Scenario s = scenario("warm_start.json");
  const MappoController c = train_controller(s);
  const AutoencoderTraining ae = train_encoder(s);
  MemoryStore store(s.memory.store);
  RunContext ctx;
  ctx.controller = &c;
  ctx.memory = &store;
  ctx.encoder = &ae.model;
  const auto eps = summarize(run_scenario(s, RunMode::Proposed, ctx));
  const bool shape = eps.size() == 3 && eps[0].intent == eps[2].intent;
  const auto& cold = eps.front();
  const auto& warm = eps.back();
  const bool ok = agree == 1000 && shape && cold.converged && cold.convergence_loop >= 5 && !cold.memory_hit &&
                  warm.memory_hit && warm.converged && warm.convergence_loop <= 2;
  return {ok, fmt("retrieval agrees with the exhaustive scan on %d/1000 random stores (%d hits); cold convergence "
                  "loop %d, warm convergence loop %d with memory %s, %.0f s",
                  agree, hits, cold.convergence_loop, warm.convergence_loop, warm.memory_hit ? "hit" : "miss",
                  seconds_since(t0))};
}

Outcome table_accounting() {
  const auto rows = accounting_table(load_manifests(default_manifest_path()));
  const double want[2][4] = {{45.7, 15.3, 11.4, 3.8}, {88.2, 29.5, 22.1, 7.4}};
  double worst = 0.0;
  bool reduction_ok = rows.size() == 2;
  std::string cells;
  for (std::size_t m = 0; m < rows.size() && m < 2; ++m) {
    for (int j = 0; j < 4; ++j) {
      worst = std::max(worst, std::abs(rows[m].gb[j] - want[m][j]) / want[m][j]);
      cells += fmt("%s%.1f", j == 0 ? (m == 0 ? "" : "; ") : "/", rows[m].gb[j]);
    }
    reduction_ok = reduction_ok && rows[m].reduction_pct >= 90.0 && rows[m].reduction_pct <= 94.0;
    cells += fmt(" (%.1f%%)", rows[m].reduction_pct);
  }
  return {rows.size() == 2 && worst <= 0.05 && reduction_ok,
          fmt("GB %s, worst deviation %.1f%% (limit 5%%)", cells.c_str(), 100.0 * worst)};
}

Outcome nf4_round_trip() {
  const auto& book = nf4_codebook();
  // fixed points: a block holding every level scaled by its absmax
  Eigen::MatrixXd fixed(1, 16);
  for (int i = 0; i < 16; ++i) fixed(0, i) = 0.37 * book[static_cast<std::size_t>(i)];
  const auto qf = nf4_quantize(fixed, 16);
  const Eigen::MatrixXd df = nf4_dequantize(qf);
  bool exact = true;
  for (int i = 0; i < 16; ++i) exact = exact && qf.codes[static_cast<std::size_t>(i)] == i && df(0, i) == fixed(0, i);

  // random weights: |w - deq(w)| <= absmax(block) * max_gap / 2
  double max_gap = 0.0;
  for (int i = 1; i < 16; ++i)
    max_gap = std::max(max_gap, book[static_cast<std::size_t>(i)] - book[static_cast<std::size_t>(i - 1)]);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 0.02);
  Eigen::MatrixXd w(100, 100);
  for (auto& x : w.reshaped<Eigen::RowMajor>()) x = g(rng);
  const int block = 64;
  const auto q = nf4_quantize(w, block);
  const Eigen::MatrixXd d = nf4_dequantize(q);
  const auto flat_w = w.reshaped<Eigen::RowMajor>();
  const auto flat_d = d.reshaped<Eigen::RowMajor>();
  int violations = 0;
  double worst_ratio = 0.0;
  for (Eigen::Index start = 0; start < flat_w.size(); start += block) {
    const Eigen::Index end = std::min<Eigen::Index>(start + block, flat_w.size());
    double absmax = 0.0;
    for (Eigen::Index i = start; i < end; ++i) absmax = std::max(absmax, std::abs(flat_w(i)));
    const double bound = absmax * max_gap / 2.0;
    for (Eigen::Index i = start; i < end; ++i) {
      const double err = std::abs(flat_w(i) - flat_d(i));
      if (err > bound * (1.0 + 1e-12)) ++violations;
      worst_ratio = std::max(worst_ratio, err / bound);
    }
  }
  return {exact && violations == 0,
          fmt("16 fixed points %s, 10^4 Gaussian weights: %d above the half-gap bound, worst error %.3f of the bound",
              exact ? "exact" : "not exact", violations, worst_ratio)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"wmmse_monotonicity", wmmse_monotonicity},
      {"power_feasibility", power_feasibility},
      {"scalar_rate_oracle", scalar_rate_oracle},
      {"ppo_gradient_check", ppo_gradient_check},
      {"advantage_oracle", advantage_oracle},
      {"mappo_smoke_training", mappo_smoke},
      {"desk_energy_saving", desk_comparison},
      {"intent_translation", intent_translation},
      {"rate_timeline_shape", fig5_shape},
      {"memory_warm_start", memory_warm_start},
      {"adapter_memory_table", table_accounting},
      {"nf4_round_trip", nf4_round_trip},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    const auto selected = [&](const char* a) { return std::string(name).find(a) != std::string::npos; };
    if (argc > 1 && std::none_of(argv + 1, argv + argc, selected)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    ++ran;
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
