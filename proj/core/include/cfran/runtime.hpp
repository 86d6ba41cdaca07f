#pragma once

// Scenario runner: builds the world from a scenario, trains or loads the
// activation controller, and steps one of four control modes while applying
// scripted and submitted intents at loop boundaries.

#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cfran/agents.hpp"
#include "cfran/intent.hpp"
#include "cfran/scenario.hpp"

namespace cfran {

enum class RunMode { Proposed, DrlGa, Greedy, FullPower };

std::string_view to_string(RunMode mode);
/// "proposed", "drl_ga", "greedy", "full_power".
RunMode run_mode_from_string(std::string_view text);
/// Modes whose energy-saving intents need a trained controller.
bool uses_controller(RunMode mode);

World build_world(const Scenario& scenario, const MappoController* controller = nullptr);

/// The objective the training environment enforces (scenario.training.intent).
ObjectiveSpec training_objective(const Scenario& scenario);

using TrainProgress = std::function<void(int episode, const IterationStats&)>;
MappoController train_controller(const Scenario& scenario, const TrainProgress& progress = {});

/// Fits the embedding on topologies drawn from corpus_seed onward, all
/// carrying the training R_min profile.
AutoencoderTraining train_encoder(const Scenario& scenario);

std::unique_ptr<IntentBackend> make_backend(const ReasonerConfig& config);

struct RunRecord {
  std::string scenario_name;
  std::string scenario_hash;
  RunMode mode = RunMode::Proposed;
  int num_users = 0;
  int num_orus = 0;
  std::vector<LoopSnapshot> snapshots;  ///< one per loop, in order
  std::vector<Message> messages;        ///< every bus message, A1 included
  std::vector<std::string> notes;       ///< non-fatal events, e.g. infeasible greedy
  double wall_ms = 0.0;

  /// Without wall-clock fields when `with_timing` is false.
  nlohmann::json to_json(bool with_timing = true) const;
};

struct RunContext {
  const MappoController* controller = nullptr;
  MemoryStore* memory = nullptr;
  const Autoencoder* encoder = nullptr;
  /// Defaults to the scenario's reasoner.
  IntentBackend* backend = nullptr;
};

class ScenarioRunner {
 public:
  using SnapshotHandler = std::function<void(const LoopSnapshot&)>;

  ScenarioRunner(Scenario scenario, RunMode mode, RunContext context = {});
  ~ScenarioRunner();
  ScenarioRunner(const ScenarioRunner&) = delete;
  ScenarioRunner& operator=(const ScenarioRunner&) = delete;

  /// Translates now and queues the intent for the next loop boundary.
  /// Throws IntentRejected, or InvalidArgument when the mode cannot serve it.
  /// Safe to call from any thread.
  Translation submit(const std::string& text);

  /// Applies scheduled and queued intents, then runs one loop. Single writer.
  LoopSnapshot step();
  /// Steps through the scenario's remaining loops.
  RunRecord run();

  /// Latest published snapshot; before the first loop, the all-on start.
  LoopSnapshot latest() const;
  int next_loop() const;
  bool finished() const { return next_loop() >= scenario_.loops; }

  /// Called on the stepping thread after each loop.
  void on_snapshot(SnapshotHandler handler);

  const Scenario& scenario() const { return scenario_; }
  RunMode mode() const { return mode_; }
  MessageBus& bus() { return bus_; }
  RunRecord record() const;

 private:
  class Baseline;

  void apply_intent(const std::string& text, const Translation& t, int loop);
  void check_servable(const ObjectiveSpec& spec) const;

  Scenario scenario_;
  RunMode mode_;
  RunContext context_;
  std::unique_ptr<IntentBackend> own_backend_;
  World world_;
  MessageBus bus_;
  std::unique_ptr<Coordinator> coordinator_;
  std::unique_ptr<Baseline> baseline_;

  mutable std::mutex mutex_;
  std::deque<std::pair<std::string, Translation>> queue_;
  LoopSnapshot latest_;
  int next_loop_ = 0;
  RunRecord record_;
  std::vector<SnapshotHandler> handlers_;
};

RunRecord run_scenario(const Scenario& scenario, RunMode mode, RunContext context = {});

/// Writes loops.csv, summary.csv, snapshots.jsonl, messages.jsonl (all
/// deterministic for fixed seeds) and timing.csv into `dir`. Returns the paths.
std::vector<std::string> export_metrics(const RunRecord& record, const std::string& dir);

/// Per-episode summary of a record.
struct EpisodeSummary {
  int episode = 0;
  std::string intent;
  int first_loop = 0;
  int loops = 0;
  int convergence_loop = -1;
  bool converged = false;
  int final_active = 0;
  double active_fraction = 0.0;
  double min_margin_mbps = 0.0;  ///< min over constrained users of r - R_min; 0 if none
  std::vector<int> violated_users;  ///< 1-based, at the last loop
  bool memory_hit = false;
};

std::vector<EpisodeSummary> summarize(const RunRecord& record);

}  // namespace cfran
