// cfran: train the activation controller, run or compare control modes on a
// scenario, serve a live run over HTTP, and print the adapter memory table.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cfran/error.hpp"
#include "cfran/qlora.hpp"
#include "cfran/runtime.hpp"
#include "cfran/service.hpp"

namespace fs = std::filesystem;
using namespace cfran;

namespace {

struct Common {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> topology_seed;
  std::optional<std::uint64_t> channel_seed;
  std::string checkpoint;
  std::string memory;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("-s,--scenario", c.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Override the training seed");
  app->add_option("--topology-seed", c.topology_seed, "Override the topology seed");
  app->add_option("--channel-seed", c.channel_seed, "Override the small-scale fading seed");
  app->add_option("-c,--checkpoint", c.checkpoint,
                  "Controller checkpoint; trained and written here when the file does not exist");
  if (with_out) app->add_option("-o,--out", c.out, "Output directory");
  app->add_flag("-q,--quiet", c.quiet, "Less progress output");
}

Scenario load(const Common& c) {
  Scenario s = load_scenario(c.scenario);
  if (c.seed) s.training.seed = *c.seed;
  if (c.topology_seed) s.network.topology_seed = *c.topology_seed;
  if (c.channel_seed) s.network.channel_seed = *c.channel_seed;
  s.validate();
  return s;
}

bool needs_controller(const Scenario& s) {
  GrammarBackend g;
  for (const auto& e : s.schedule)
    if (g.translate(e.text, s.network.num_users).energy_saving) return true;
  return false;
}

MappoController train(const Scenario& s, bool quiet, std::ofstream* log) {
  const int every = std::max(1, s.training.episodes / 20);
  if (!quiet)
    std::fprintf(stderr, "training %d episodes on %d O-RUs / %d users\n", s.training.episodes, s.network.num_orus,
                 s.network.num_users);
  if (log) *log << "episode,mean_reward,active_fraction,violation_sum,policy_loss,value_loss,aborted\n";
  return train_controller(s, [&](int e, const IterationStats& st) {
    if (log)
      *log << e << ',' << st.mean_reward << ',' << st.active_fraction << ',' << st.violation_sum << ','
           << st.policy_loss << ',' << st.value_loss << ',' << (st.aborted ? 1 : 0) << '\n';
    if (!quiet && (e + 1) % every == 0)
      std::fprintf(stderr, "  episode %5d  reward %8.4f  active %.2f  violation %.3f\n", e + 1, st.mean_reward,
                   st.active_fraction, st.violation_sum);
  });
}

std::optional<MappoController> controller_for(const Scenario& s, const Common& c, bool required) {
  if (!c.checkpoint.empty() && fs::exists(c.checkpoint)) return MappoController::load(c.checkpoint);
  if (!required) return std::nullopt;
  MappoController m = train(s, c.quiet, nullptr);
  if (!c.checkpoint.empty()) m.save(c.checkpoint);
  return m;
}

// Memory store plus encoder: loaded from --memory when the file exists,
// otherwise a fresh store with a newly fitted encoder.
struct MemoryState {
  std::optional<MemoryStore> store;
  std::optional<Autoencoder> encoder;
};

MemoryState memory_for(const Scenario& s, const Common& c) {
  MemoryState m;
  if (!s.memory.enabled) return m;
  if (!c.memory.empty() && fs::exists(c.memory)) {
    auto [store, enc] = load_memory(c.memory);
    m.store.emplace(std::move(store));
    m.encoder.emplace(std::move(enc));
    return m;
  }
  if (!c.quiet) std::fprintf(stderr, "fitting memory encoder on %d topologies\n", s.memory.corpus_size);
  m.encoder.emplace(train_encoder(s).model);
  m.store.emplace(s.memory.store);
  return m;
}

void print_summary(const RunRecord& r, bool header = true) {
  if (header)
    std::printf("%-10s  %-4s %-5s %-7s %-6s %-10s %10s %-4s %s\n", "mode", "ep", "first", "loops", "conv", "active",
                "margin", "hit", "intent");
  for (const auto& e : summarize(r)) {
    std::printf("%-10s  %-4d %-5d %-7d %-6s %3d (%3.0f%%) %10.2f %-4s %s\n", std::string(to_string(r.mode)).c_str(),
                e.episode, e.first_loop, e.loops, e.converged ? std::to_string(e.convergence_loop).c_str() : "no",
                e.final_active, 100.0 * e.active_fraction, e.min_margin_mbps, e.memory_hit ? "yes" : "-",
                e.intent.c_str());
  }
  for (const auto& n : r.notes) std::printf("note: %s\n", n.c_str());
}

void write_record(const RunRecord& r, const std::string& dir) {
  export_metrics(r, dir);
  std::ofstream out(fs::path(dir) / "record.json");
  out << r.to_json().dump(1) << '\n';
}

int cmd_train(const Common& c, int episodes) {
  Scenario s = load(c);
  if (episodes > 0) s.training.episodes = episodes;
  if (c.checkpoint.empty()) throw InvalidArgument("--checkpoint is required for train");
  std::optional<std::ofstream> log;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    log.emplace(fs::path(c.out) / "training.csv");
  }
  const MappoController m = train(s, c.quiet, log ? &*log : nullptr);
  m.save(c.checkpoint);
  std::printf("wrote %s\n", c.checkpoint.c_str());
  return 0;
}

int cmd_run(const Common& c, const std::string& mode_name) {
  const Scenario s = load(c);
  const RunMode mode = run_mode_from_string(mode_name);
  const auto ctrl = controller_for(s, c, uses_controller(mode) && needs_controller(s));
  MemoryState mem = mode == RunMode::Proposed ? memory_for(s, c) : MemoryState{};
  RunContext ctx{ctrl ? &*ctrl : nullptr, mem.store ? &*mem.store : nullptr, mem.encoder ? &*mem.encoder : nullptr};
  const RunRecord r = run_scenario(s, mode, ctx);
  print_summary(r);
  if (!c.out.empty()) {
    write_record(r, c.out);
    std::printf("wrote %s\n", c.out.c_str());
  }
  if (!c.memory.empty() && mem.store) save_memory(c.memory, *mem.store, *mem.encoder);
  return 0;
}

int cmd_compare(const Common& c) {
  const Scenario s = load(c);
  const auto ctrl = controller_for(s, c, needs_controller(s));
  MemoryState mem = memory_for(s, c);
  std::vector<std::pair<RunMode, EpisodeSummary>> last;
  for (RunMode mode : {RunMode::Proposed, RunMode::DrlGa, RunMode::Greedy, RunMode::FullPower}) {
    std::optional<MemoryStore> store;
    if (mode == RunMode::Proposed && mem.store) store.emplace(*mem.store);
    RunContext ctx{ctrl ? &*ctrl : nullptr, store ? &*store : nullptr, mem.encoder ? &*mem.encoder : nullptr};
    const RunRecord r = run_scenario(s, mode, ctx);
    print_summary(r, mode == RunMode::Proposed);
    if (!c.out.empty()) write_record(r, (fs::path(c.out) / std::string(to_string(mode))).string());
    last.emplace_back(mode, summarize(r).back());
  }
  std::printf("\n%-10s %8s %10s %9s %s\n", "mode", "active", "fraction", "margin", "violated");
  for (const auto& [mode, e] : last) {
    std::string users;
    for (int u : e.violated_users) users += (users.empty() ? "" : ",") + std::to_string(u);
    std::printf("%-10s %8d %9.1f%% %9.2f %s\n", std::string(to_string(mode)).c_str(), e.final_active,
                100.0 * e.active_fraction, e.min_margin_mbps, users.empty() ? "-" : users.c_str());
  }
  return 0;
}

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

int cmd_serve(const Common& c, const std::string& mode_name, ServiceConfig cfg) {
  const Scenario s = load(c);
  const RunMode mode = run_mode_from_string(mode_name);
  // intents can arrive at any time, so controller modes always carry one
  const auto ctrl = controller_for(s, c, uses_controller(mode));
  MemoryState mem = mode == RunMode::Proposed ? memory_for(s, c) : MemoryState{};
  RunContext ctx{ctrl ? &*ctrl : nullptr, mem.store ? &*mem.store : nullptr, mem.encoder ? &*mem.encoder : nullptr};
  ScenarioRunner runner(s, mode, ctx);
  Service service(runner, cfg);
  service.start();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("serving %s (%s, %d loops) on http://%s:%d/v1/\n", s.name.c_str(), mode_name.c_str(), s.loops,
              cfg.host.c_str(), service.port());
  std::fflush(stdout);
  while (!service.wait_for(std::chrono::milliseconds(200)) && !g_interrupted) {
  }
  service.stop();
  const RunRecord r = runner.record();
  print_summary(r);
  if (!c.out.empty()) write_record(r, c.out);
  return 0;
}

int cmd_accounting(const std::string& manifest, int agents, bool scales, bool json) {
  AccountingOptions opt;
  opt.include_block_scales = scales;
  const auto rows = accounting_table(load_manifests(manifest), agents, opt);
  if (json) {
    std::cout << accounting_to_json(rows).dump(2) << '\n';
  } else {
    std::cout << format_accounting(rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cell-free O-RAN intent-driven control: training, runs, service and accounting"};
  app.require_subcommand(1);

  Common c;
  std::string mode = "proposed";
  int episodes = 0;

  auto* train_cmd = app.add_subcommand("train", "Train the O-RU activation controller");
  add_common(train_cmd, c);
  train_cmd->add_option("--episodes", episodes, "Override the number of training episodes")
      ->check(CLI::PositiveNumber);

  auto* run_cmd = app.add_subcommand("run", "Run a scenario in one control mode");
  add_common(run_cmd, c);
  run_cmd->add_option("-m,--mode", mode, "proposed, drl_ga, greedy or full_power")
      ->check(CLI::IsMember({"proposed", "drl_ga", "greedy", "full_power"}));
  run_cmd->add_option("--memory", c.memory, "Memory store file, loaded if present and written after the run");

  auto* compare_cmd = app.add_subcommand("compare", "Run a scenario in all four control modes");
  add_common(compare_cmd, c);
  compare_cmd->add_option("--memory", c.memory, "Memory store file to start from");

  ServiceConfig svc;
  auto* serve_cmd = app.add_subcommand("serve", "Run a scenario live behind the HTTP service");
  add_common(serve_cmd, c);
  serve_cmd->add_option("-m,--mode", mode, "proposed, drl_ga, greedy or full_power")
      ->check(CLI::IsMember({"proposed", "drl_ga", "greedy", "full_power"}));
  serve_cmd->add_option("--memory", c.memory, "Memory store file to start from");
  serve_cmd->add_option("--host", svc.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", svc.port, "Port, 0 for any free port")->capture_default_str();
  serve_cmd->add_option("--period-ms", svc.period_ms, "Minimum time per coordination loop")->capture_default_str();
  serve_cmd->add_flag("--paused", svc.start_paused, "Wait for a resume before the first loop");
  serve_cmd->add_option("--allow-origin", svc.allow_origin, "CORS allowed origin")->capture_default_str();

  std::string manifest = default_manifest_path();
  int agents = 3;
  bool scales = false;
  bool json = false;
  auto* acc_cmd = app.add_subcommand("accounting", "Memory table for separate vs shared adapter deployments");
  acc_cmd->add_option("--manifest", manifest, "Layer manifest JSON")->check(CLI::ExistingFile)->capture_default_str();
  acc_cmd->add_option("--agents", agents, "Number of agents")->check(CLI::PositiveNumber)->capture_default_str();
  acc_cmd->add_flag("--include-block-scales", scales, "Count one 16-bit scale per 64 quantized weights");
  acc_cmd->add_flag("--json", json, "JSON output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(c, episodes);
    if (*run_cmd) return cmd_run(c, mode);
    if (*compare_cmd) return cmd_compare(c);
    if (*serve_cmd) {
      if (svc.start_paused) std::fprintf(stderr, "--paused: the run starts on the first POST /v1/resume\n");
      return cmd_serve(c, mode, svc);
    }
    if (*acc_cmd) return cmd_accounting(manifest, agents, scales, json);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
