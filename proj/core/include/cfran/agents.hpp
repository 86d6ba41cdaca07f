#pragma once

// Near-RT agents and the coordination loop. Per loop: user weighting sets
// alpha, O-RU management sets z, the precoder solves with both held fixed,
// and monitoring inspects the result and schedules boosts or penalty raises
// for the next loop.

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfran/bus.hpp"
#include "cfran/intent.hpp"
#include "cfran/mappo.hpp"
#include "cfran/memory.hpp"
#include "cfran/precoder.hpp"

namespace cfran {

struct AgentConfig {
  int window = 10;
  double alpha_high = 50.0;
  double boost_factor = 1.5;
  double lambda_init = 1.0;
  double lambda_growth = 2.0;
  double lambda_max = 100.0;
  double viol_tol_mbps = 0.1;
  double stall_tol_mbps = 0.05;
  int stall_min_entries = 3;  ///< window entries needed before a stall can be declared
  int patience = 3;
  int loop_cap = 200;
  double dual_step = 0.05;    ///< zeta, per unit of relative shortfall (R_min - r) / R_min

  void validate() const;
};

struct HistoryEntry {
  int loop = 0;
  std::vector<double> violation_mbps;
  std::vector<double> mu;
  std::vector<double> lambda;
  std::vector<double> alpha;
  std::vector<double> rates_mbps;
};

/// Last W loops, oldest first.
class HistoryWindow {
 public:
  explicit HistoryWindow(int capacity = 10);

  void push(HistoryEntry entry);
  void clear() { entries_.clear(); }
  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const HistoryEntry& latest() const;
  const std::deque<HistoryEntry>& entries() const { return entries_; }
  /// max - min of r_k over the window.
  double rate_range(int user) const;

 private:
  int capacity_;
  std::deque<HistoryEntry> entries_;
};

struct PenaltyState {
  std::vector<double> lambda;
  double lambda_max = 100.0;

  static PenaltyState uniform(int num_users, double lambda_init, double lambda_max);
  /// lambda_k <- min(lambda_max, lambda_k * growth).
  void raise(int user, double growth);
  void validate() const;
};

enum class MonitorActionKind { BoostWeight, RaisePenalty };

struct MonitorAction {
  MonitorActionKind kind = MonitorActionKind::BoostWeight;
  int user = 0;  ///< 0-based
  bool stalled = false;

  bool operator==(const MonitorAction&) const = default;
};

struct MonitorDecision {
  std::vector<MonitorAction> actions;
  std::vector<int> violated;  ///< 0-based

  bool ok() const { return violated.empty(); }
  bool boosts(int user) const;
  bool raises(int user) const;
  /// "ok" or e.g. "boost_weight(3), raise_penalty(5)" with 1-based users.
  std::string to_string() const;
  nlohmann::json to_json() const;
};

struct WeightingState {
  std::vector<double> mu;
  std::vector<double> boost;  ///< multiplicative, starts at 1

  static WeightingState initial(int num_users);
};

struct WeightingResult {
  std::vector<double> alpha;
  std::vector<double> mu;
  bool from_memory = false;
};

/// With `retrieved`, returns its alpha unchanged and mu = max(0, alpha - U'(r)).
/// Otherwise applies any boosts requested by `monitor`, raises mu by
/// dual_step times the relative shortfall of `rates_mbps` and sets
/// alpha_k = boost_k (U'_k(r_k) + mu_k).
WeightingResult user_weighting_step(const UtilitySpec& spec, const std::vector<double>& rates_mbps,
                                    WeightingState& state, const MonitorDecision* monitor,
                                    const Experience* retrieved, const AgentConfig& agents,
                                    const SolverConfig& solver, double bandwidth_hz);

/// Context the O-RU management agent needs beyond the objective.
struct ManagementInput {
  const LargeScaleFading* fading = nullptr;
  const MappoController* controller = nullptr;
  std::vector<double> rates_mbps;  ///< latest observed
  ActivationVector z_prev;
};

/// Non-ES: all O-RUs on, penalties untouched. ES: raise the requested
/// penalties, then the policies pick z from fresh observations.
ActivationVector oru_management_step(const ObjectiveSpec& spec, const ManagementInput& input,
                                     PenaltyState& penalties, const MonitorDecision* monitor,
                                     const AgentConfig& config);

/// Per violated user: boost_weight while alpha_k < alpha_high and r_k still
/// moves, raise_penalty otherwise. A stalled user whose penalty is already
/// at lambda_max is boosted again if alpha allows.
MonitorDecision monitoring_step(const HistoryWindow& history, const std::vector<double>& alpha,
                                const std::vector<double>& lambda, const ObjectiveSpec& spec,
                                const AgentConfig& config);

/// Violations max(0, R_min - r) in Mbps.
std::vector<double> violations_mbps(const std::vector<double>& rates_mbps, const std::vector<double>& r_min_mbps);

// ---------------------------------------------------------------------------

/// Everything the loop controls or reads: the radio scene, the precoder
/// settings and, for energy saving, a trained controller.
struct World {
  LargeScaleFading fading;
  ChannelSet channels;
  int l_max = 3;
  double p_max_w = 1.0;
  SolverConfig solver;
  const MappoController* controller = nullptr;
};

enum class ControlMode { Proposed, DrlGa };

std::string_view to_string(ControlMode mode);

struct CoordinatorConfig {
  AgentConfig agents;
  ControlMode mode = ControlMode::Proposed;
  /// DRL+GA gradient steps, per Mbps of shortfall.
  double ga_mu_step = 0.05;
  double ga_lambda_step = 0.5;
};

struct MemoryHitInfo {
  double similarity = 0.0;
  std::size_t index = 0;
  int stored_loops = 0;
};

struct LoopSnapshot {
  int loop = -1;  ///< -1 for the state before the first loop
  int episode = 0;
  int episode_loop = 0;
  std::string intent;
  ObjectiveSpec objective;
  std::vector<double> rates_mbps;
  ActivationVector z;
  std::vector<double> alpha;
  std::vector<double> mu;
  std::vector<double> lambda;
  std::vector<double> violation_mbps;
  MonitorDecision decision;
  bool converged = false;
  int convergence_loop = -1;  ///< episode loop where the final ok streak began
  std::optional<MemoryHitInfo> memory_hit;
  bool stored_to_memory = false;
  int solver_iterations = 0;
  double wall_ms = 0.0;
  std::vector<Message> messages;

  int active_count() const;
  /// Wire form, schema cfran.snapshot.v1. `with_timing` adds wall_ms.
  nlohmann::json to_json(bool with_timing = true) const;
};

struct CoordinationResult {
  bool converged = false;
  int loops = 0;
  int convergence_loop = -1;
  std::vector<int> violated_users;  ///< 1-based, when not converged
  std::string report;
  std::vector<LoopSnapshot> trace;
};

class Coordinator {
 public:
  /// Starts with every O-RU on under an unconstrained sum-rate objective.
  Coordinator(World world, CoordinatorConfig config, MessageBus* bus = nullptr, MemoryStore* memory = nullptr,
              const Autoencoder* encoder = nullptr);

  /// New episode at the next loop boundary. Throws InvalidArgument when the
  /// objective needs a controller that the world lacks.
  void start_intent(const std::string& text, const ObjectiveSpec& spec);

  LoopSnapshot step();
  /// Steps until convergence or `loop_cap` loops of the current episode.
  CoordinationResult run_until_converged(int loop_cap = -1);

  const LoopSnapshot& latest() const { return latest_; }
  const World& world() const { return world_; }
  const CoordinatorConfig& config() const { return config_; }
  const ObjectiveSpec& objective() const { return objective_; }
  const PenaltyState& penalties() const { return penalties_; }
  const HistoryWindow& history() const { return history_; }
  int next_loop() const { return next_loop_; }
  bool converged() const { return converged_; }

 private:
  void publish(Message m, LoopSnapshot& snap);

  World world_;
  CoordinatorConfig config_;
  MessageBus* bus_;
  MemoryStore* memory_;
  const Autoencoder* encoder_;

  ObjectiveSpec objective_;
  UtilitySpec utility_;
  std::string intent_text_;
  int episode_ = 0;
  int episode_loop_ = 0;
  int next_loop_ = 0;

  WeightingState weighting_;
  PenaltyState penalties_;
  HistoryWindow history_;
  std::vector<double> alpha_;
  ActivationVector z_;
  PrecodingState state_;
  MonitorDecision pending_;
  std::optional<RetrievalHit> hit_;

  int ok_streak_ = 0;
  int streak_start_ = -1;
  bool converged_ = false;
  int convergence_loop_ = -1;
  bool stored_ = false;

  LoopSnapshot latest_;
};

}  // namespace cfran
