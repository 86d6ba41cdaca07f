#pragma once

// Operator intent translation: free text -> ObjectiveSpec plus the three
// supervisor messages for the near-RT agents.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfran/bus.hpp"
#include "cfran/error.hpp"
#include "cfran/precoder.hpp"

namespace cfran {

/// Grammar rejection; what() carries the diagnosis.
class IntentRejected : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class IntentKind { EnergySaving, UtilityMaximization };

std::string_view to_string(IntentKind kind);

struct Intent {
  std::string text;
  int loop = 0;
};

struct RateConstraint {
  int user = 0;  ///< 1-based, as operators write it
  double mbps = 0.0;

  bool operator==(const RateConstraint&) const = default;
};

struct ObjectiveSpec {
  UtilityKind utility = UtilityKind::SumRate;  ///< SumRate or SumLogRate
  bool energy_saving = false;
  std::vector<double> r_min_mbps;              ///< per user, 0 = none
  std::vector<RateConstraint> monitored;       ///< every user with R_min > 0, ascending

  IntentKind kind() const { return energy_saving ? IntentKind::EnergySaving : IntentKind::UtilityMaximization; }
  int num_users() const { return static_cast<int>(r_min_mbps.size()); }
  bool has_constraints() const { return !monitored.empty(); }

  /// Precoder-facing utility. Energy-saving intents weight with sum-rate.
  UtilitySpec utility_spec(double p_max_w, double dual_step = 0.05) const;

  /// Canonical serialization; dump() of this is byte-stable.
  nlohmann::json to_json() const;
  static ObjectiveSpec from_json(const nlohmann::json& j);

  bool operator==(const ObjectiveSpec&) const = default;
};

/// Fills `monitored` from r_min_mbps.
void sync_monitored(ObjectiveSpec& spec);

struct SupervisorMessages {
  std::string user_weighting;
  std::string oru_management;
  std::string monitoring;
};

/// Message texts in the supervisor's fixed format, e.g.
/// "Objective: sum(r_k)\nConstraint: r_3 >= 50 Mbps".
SupervisorMessages render_messages(const ObjectiveSpec& spec);

/// "50", "12.5", "0.125": fewest decimals that round-trip to 1e-9.
std::string format_mbps(double mbps);

class IntentBackend {
 public:
  virtual ~IntentBackend() = default;
  virtual std::string name() const = 0;
  /// Throws IntentRejected when the text cannot be interpreted.
  virtual ObjectiveSpec translate(const std::string& text, int num_users) = 0;
};

/// Deterministic rule engine over a small sentence grammar.
class GrammarBackend : public IntentBackend {
 public:
  std::string name() const override { return "grammar"; }
  ObjectiveSpec translate(const std::string& text, int num_users) override;
};

/// Client for an external text model speaking the cfran.objective.v1 schema.
/// Any transport or schema failure falls back to the grammar engine.
class RemoteBackend : public IntentBackend {
 public:
  RemoteBackend(std::string host, int port, std::string path = "/v1/translate", int timeout_ms = 2000);

  std::string name() const override { return "remote"; }
  ObjectiveSpec translate(const std::string& text, int num_users) override;

  bool last_fell_back() const { return fell_back_; }
  const std::string& last_fallback_reason() const { return reason_; }

  /// The fixed prompt template sent with each request.
  static std::string prompt_template();
  /// Strict validation of a response payload; throws FormatError.
  static ObjectiveSpec parse_response(const std::string& body, int num_users);

 private:
  std::string host_;
  int port_;
  std::string path_;
  int timeout_ms_;
  GrammarBackend fallback_;
  bool fell_back_ = false;
  std::string reason_;
};

struct Translation {
  ObjectiveSpec spec;
  SupervisorMessages messages;
  std::string backend;
  bool fell_back = false;
  std::string fallback_reason;
};

/// The three A1 messages for an already translated intent.
void publish_supervisor_messages(const Translation& t, const Intent& intent, MessageBus& bus);

/// Translates and, when `bus` is given, publishes the three supervisor
/// messages over A1.
Translation translate_intent(const Intent& intent, IntentBackend& backend, int num_users,
                             MessageBus* bus = nullptr);

}  // namespace cfran
