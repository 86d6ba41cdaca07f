#include <benchmark/benchmark.h>

#include <random>

#include "cfran/agents.hpp"
#include "cfran/mappo.hpp"
#include "cfran/memory.hpp"
#include "cfran/precoder.hpp"
#include "cfran/qlora.hpp"

using namespace cfran;

namespace {

struct Net {
  LargeScaleFading fading;
  ChannelSet channels;
  ActivationVector z;
  Association assoc;
};

Net make_net(int K, int L) {
  Net n;
  n.fading = compute_large_scale_fading(generate_topology(1, L, K, 400.0), PathLossParams{});
  n.channels = draw_channels(n.fading, AntennaConfig{}, NoiseParams{}, 101);
  n.z.assign(static_cast<std::size_t>(L), 1);
  n.assoc = associate_users(n.fading, n.z, 3);
  return n;
}

void BM_WmmseIteration(benchmark::State& st) {
  const Net n = make_net(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  const auto spec = UtilitySpec::uniform(UtilityKind::SumRate, n.fading.num_users(), 0.0, 1.0);
  PrecodingState s = initialize_state(n.channels, n.assoc, n.z, 1.0);
  for (auto _ : st) {
    s = wmmse_iteration(s, n.channels, n.assoc, n.z, spec);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_WmmseIteration)->Args({5, 10})->Args({8, 20});

void BM_Solve(benchmark::State& st) {
  const Net n = make_net(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  const auto spec = UtilitySpec::uniform(UtilityKind::SumRate, n.fading.num_users(), 10.0, 1.0);
  for (auto _ : st) {
    auto s = solve(n.channels, n.assoc, spec, n.z);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_Solve)->Args({5, 10})->Args({8, 20})->Unit(benchmark::kMillisecond);

void BM_PolicyInference(benchmark::State& st) {
  const Net n = make_net(8, 20);
  const MappoController c(8, 20, n.fading, MappoHyper{}, 1);
  const auto obs = build_observations(n.fading, std::vector<double>(8, 0.1), std::vector<double>(8, 1.0), n.z);
  for (auto _ : st) benchmark::DoNotOptimize(c.infer(obs));
}
BENCHMARK(BM_PolicyInference);

void BM_Advantages(benchmark::State& st) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> r(10), v(11);
  for (auto& x : r) x = g(rng);
  for (auto& x : v) x = g(rng);
  for (auto _ : st) benchmark::DoNotOptimize(compute_advantages(r, v, 0.9));
}
BENCHMARK(BM_Advantages);

void BM_MemoryRetrieve(benchmark::State& st) {
  MemoryConfig cfg;
  cfg.d_emb = 32;
  MemoryStore store(cfg);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  auto vec = [&] {
    VectorXd x(32);
    for (auto& e : x) e = g(rng);
    return x;
  };
  for (int i = 0; i < st.range(0); ++i) store.store({vec(), {1.0}, {1.0}});
  const VectorXd q = vec();
  for (auto _ : st) benchmark::DoNotOptimize(store.retrieve(q));
}
BENCHMARK(BM_MemoryRetrieve)->Arg(100)->Arg(1000);

void BM_Nf4Quantize(benchmark::State& st) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.02);
  Eigen::MatrixXd w(256, 256);
  for (auto& x : w.reshaped()) x = g(rng);
  for (auto _ : st) benchmark::DoNotOptimize(nf4_quantize(w));
  st.SetItemsProcessed(st.iterations() * w.size());
}
BENCHMARK(BM_Nf4Quantize);

void BM_AdapterForward(benchmark::State& st) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.02);
  Eigen::MatrixXd w(512, 512);
  for (auto& x : w.reshaped()) x = g(rng);
  const auto q = nf4_quantize(w);
  Adapter a;
  a.A = Eigen::MatrixXd::Constant(512, 16, 0.01);
  a.B = Eigen::MatrixXd::Constant(16, 512, 0.01);
  a.eta = 16.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(512);
  for (auto _ : st) benchmark::DoNotOptimize(adapter_forward(q, a, x));
}
BENCHMARK(BM_AdapterForward);

void BM_CoordinationLoop(benchmark::State& st) {
  Net n = make_net(5, 10);
  World w;
  w.fading = n.fading;
  w.channels = n.channels;
  ObjectiveSpec spec;
  spec.utility = UtilityKind::SumLogRate;
  spec.r_min_mbps.assign(5, 0.0);
  sync_monitored(spec);
  for (auto _ : st) {
    st.PauseTiming();
    Coordinator c(w, CoordinatorConfig{});
    c.start_intent("bench", spec);
    st.ResumeTiming();
    benchmark::DoNotOptimize(c.step());
  }
}
BENCHMARK(BM_CoordinationLoop)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
