#pragma once

// Scenario files: network, solver, training, agent and memory settings plus
// a scripted intent schedule. Schema cfran.scenario.v1.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfran/activation_env.hpp"
#include "cfran/agents.hpp"
#include "cfran/mappo.hpp"
#include "cfran/memory.hpp"
#include "cfran/net_model.hpp"

namespace cfran {

struct NetworkConfig {
  std::uint64_t topology_seed = 1;
  std::uint64_t channel_seed = 101;
  int num_orus = 10;
  int num_users = 5;
  double area_side_m = 400.0;
  int l_max = 3;
  double p_max_w = 1.0;
  AntennaConfig antennas;
  PathLossParams pathloss;
  NoiseParams noise;
};

struct TrainingConfig {
  int episodes = 1000;
  std::uint64_t seed = 7;
  /// Intent whose R_min profile the training environment enforces.
  std::string intent = "Enter the energy-saving mode. Guarantee 10 Mbps for all users.";
  MappoHyper hyper;
  ActivationEnvConfig env;

  TrainingConfig();
};

struct MemorySetup {
  bool enabled = true;
  MemoryConfig store;
  int corpus_size = 200;
  std::uint64_t corpus_seed = 1000;
  int epochs = 500;
  double step = 1.0;
  std::uint64_t seed = 3;
};

struct ReasonerConfig {
  std::string backend = "grammar";  ///< "grammar" or "remote"
  std::string host = "127.0.0.1";
  int port = 0;
  std::string path = "/v1/translate";
  int timeout_ms = 2000;
};

struct ScheduledIntent {
  int loop = 0;
  std::string text;

  bool operator==(const ScheduledIntent&) const = default;
};

struct Scenario {
  std::string name = "scenario";
  NetworkConfig network;
  SolverConfig solver;
  TrainingConfig training;
  CoordinatorConfig coordination;
  MemorySetup memory;
  ReasonerConfig reasoner;
  int loops = 60;
  std::vector<ScheduledIntent> schedule;

  /// Throws FormatError naming the offending field.
  void validate() const;
  /// Every field, defaults included.
  nlohmann::json to_json() const;
  /// Unknown fields and wrong types are errors; missing fields take defaults.
  static Scenario from_json(const nlohmann::json& j);
  /// 16 hex digits over the canonical JSON form.
  std::string hash() const;
};

Scenario load_scenario(const std::string& path);

}  // namespace cfran
