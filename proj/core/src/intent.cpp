#include "cfran/intent.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>

#include <httplib.h>

namespace cfran {

namespace {

constexpr const char* kObjectiveSchema = "cfran.objective.v1";
constexpr const char* kRequestSchema = "cfran.intent_request.v1";

}  // namespace

std::string_view to_string(IntentKind kind) {
  return kind == IntentKind::EnergySaving ? "energy_saving" : "utility_maximization";
}

void sync_monitored(ObjectiveSpec& spec) {
  spec.monitored.clear();
  for (int k = 0; k < spec.num_users(); ++k)
    if (spec.r_min_mbps[k] > 0.0) spec.monitored.push_back({k + 1, spec.r_min_mbps[k]});
}

UtilitySpec ObjectiveSpec::utility_spec(double p_max_w, double dual_step) const {
  UtilitySpec u = UtilitySpec::uniform(utility, num_users(), 0.0, p_max_w, dual_step);
  u.r_min_mbps = r_min_mbps;
  return u;
}

nlohmann::json ObjectiveSpec::to_json() const {
  nlohmann::json mon = nlohmann::json::array();
  for (const auto& c : monitored) mon.push_back({{"user", c.user}, {"mbps", c.mbps}});
  return nlohmann::json{{"schema", kObjectiveSchema},
                        {"utility", std::string(to_string(utility))},
                        {"energy_saving", energy_saving},
                        {"r_min_mbps", r_min_mbps},
                        {"monitor", mon}};
}

ObjectiveSpec ObjectiveSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("objective must be a JSON object");
  static const std::set<std::string> allowed{"schema", "utility", "energy_saving", "r_min_mbps", "monitor"};
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw FormatError("objective has unexpected field '" + key + "'");
  for (const auto& key : {"schema", "utility", "energy_saving", "r_min_mbps"})
    if (!j.contains(key)) throw FormatError(std::string("objective is missing field '") + key + "'");

  if (!j["schema"].is_string() || j["schema"].get<std::string>() != kObjectiveSchema)
    throw FormatError("objective field 'schema' must be \"" + std::string(kObjectiveSchema) + "\"");
  if (!j["utility"].is_string()) throw FormatError("objective field 'utility' must be a string");
  ObjectiveSpec s;
  try {
    s.utility = utility_kind_from_string(j["utility"].get<std::string>());
  } catch (const InvalidArgument&) {
    throw FormatError("objective field 'utility' has unknown value");
  }
  if (s.utility == UtilityKind::EnergySaving)
    throw FormatError("objective field 'utility' must be sum_rate or sum_log_rate");
  if (!j["energy_saving"].is_boolean()) throw FormatError("objective field 'energy_saving' must be a boolean");
  s.energy_saving = j["energy_saving"].get<bool>();
  if (!j["r_min_mbps"].is_array()) throw FormatError("objective field 'r_min_mbps' must be an array");
  for (const auto& v : j["r_min_mbps"]) {
    if (!v.is_number()) throw FormatError("objective field 'r_min_mbps' must hold numbers");
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < 0.0) throw FormatError("objective field 'r_min_mbps' must be finite and >= 0");
    s.r_min_mbps.push_back(x);
  }
  sync_monitored(s);
  if (j.contains("monitor")) {
    const auto& m = j["monitor"];
    if (!m.is_array()) throw FormatError("objective field 'monitor' must be an array");
    std::vector<RateConstraint> given;
    for (const auto& c : m) {
      if (!c.is_object() || !c.contains("user") || !c.contains("mbps") || !c["user"].is_number_integer() ||
          !c["mbps"].is_number() || c.size() != 2)
        throw FormatError("objective field 'monitor' entries must be {user, mbps}");
      given.push_back({c["user"].get<int>(), c["mbps"].get<double>()});
    }
    if (given != s.monitored) throw FormatError("objective field 'monitor' disagrees with r_min_mbps");
  }
  return s;
}

std::string format_mbps(double mbps) {
  char buf[64];
  for (int p = 0; p <= 12; ++p) {
    std::snprintf(buf, sizeof(buf), "%.*f", p, mbps);
    if (std::abs(std::strtod(buf, nullptr) - mbps) <= 1e-9 * std::max(1.0, std::abs(mbps))) break;
  }
  return buf;
}

SupervisorMessages render_messages(const ObjectiveSpec& spec) {
  std::string constraints;
  std::string monitor;
  for (const auto& c : spec.monitored) {
    const std::string rel = "r_" + std::to_string(c.user) + " >= " + format_mbps(c.mbps) + " Mbps";
    constraints += "\nConstraint: " + rel;
    monitor += (monitor.empty() ? "" : "\n") + std::string("Monitor: ") + rel;
  }
  SupervisorMessages m;
  m.user_weighting = std::string("Objective: ") +
                     (spec.utility == UtilityKind::SumLogRate ? "sum(log(r_k))" : "sum(r_k)") + constraints;
  m.oru_management = spec.energy_saving ? "Objective: Energy Saving" + constraints : "Objective: Full Power";
  m.monitoring = monitor.empty() ? "-" : monitor;
  return m;
}

// ---------------------------------------------------------------------------
// grammar

namespace {

std::string normalize(const std::string& text) {
  std::string s;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (ch == '-' || ch == '_' || std::isspace(c)) {
      s += ' ';
    } else {
      s += static_cast<char>(std::tolower(c));
    }
  }
  std::string out;
  for (char c : s) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
    out += c;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool decimal_point = c == '.' && i > 0 && i + 1 < text.size() &&
                               std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                               std::isdigit(static_cast<unsigned char>(text[i + 1]));
    if ((c == '.' && !decimal_point) || c == ';' || c == '!' || c == '\n') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  std::vector<std::string> out;
  for (auto& p : parts) {
    auto n = normalize(p);
    while (!n.empty() && (n.back() == ',' || n.back() == ' ')) n.pop_back();
    while (!n.empty() && n.front() == ' ') n.erase(0, 1);
    if (!n.empty()) out.push_back(n);
  }
  return out;
}

const std::string kNum = R"(([0-9]+(?:\.[0-9]+)?))";
const std::string kUnit = R"((mbps|mbit/s|mb/s|gbps|gbit/s|kbps|kbit/s))";
const std::string kUsers =
    R"((all users|every user|each user|all the users|users? [0-9]+(?:(?:, and |,and | and |, |,| & )(?:user )?[0-9]+)*))";

struct Draft {
  std::optional<UtilityKind> utility;
  bool energy_saving = false;
  bool full_power = false;
  bool no_minimum = false;
  std::vector<std::pair<std::vector<int>, double>> guarantees;  // empty user list = all
};

double to_mbps(double value, const std::string& unit) {
  if (unit.rfind("g", 0) == 0) return value * 1000.0;
  if (unit.rfind("k", 0) == 0) return value / 1000.0;
  return value;
}

std::vector<int> parse_users(const std::string& s) {
  if (s.find("all") != std::string::npos || s.find("every") != std::string::npos ||
      s.find("each") != std::string::npos)
    return {};
  std::vector<int> users;
  static const std::regex num(R"([0-9]+)");
  for (auto it = std::sregex_iterator(s.begin(), s.end(), num); it != std::sregex_iterator(); ++it)
    users.push_back(std::stoi(it->str()));
  return users;
}

bool set_utility(Draft& d, UtilityKind k, const std::string& clause) {
  if (d.utility && *d.utility != k)
    throw IntentRejected("conflicting objectives: '" + clause + "' contradicts an earlier objective");
  d.utility = k;
  return true;
}

bool parse_clause(const std::string& c, Draft& d) {
  static const std::regex es1(
      R"(^(?:please )?(?:enter|switch to|activate|enable|go into|go to|turn on|use|start)(?: the)? energy saving(?: mode)?$)");
  static const std::regex es2(R"(^(?:save energy|energy saving(?: mode)?(?: on| please)?|(?:minimi[sz]e|reduce) (?:the )?energy (?:consumption|usage))$)");
  static const std::regex log1(
      R"(^(?:please )?(?:maximi[sz]e|optimi[sz]e) (?:the )?(?:sum of (?:the )?log(?:arithmic)? rates?|sum of (?:the )?logs? of (?:the )?rates|sum (?:of )?log rates?|log rate sum|proportional fairness)$)");
  static const std::regex log2(R"(^(?:use|apply|ensure|enforce) proportional fairness$)");
  static const std::regex sum1(
      R"(^(?:please )?(?:maximi[sz]e|optimi[sz]e) (?:the )?(?:sum rates?|sum of (?:the )?(?:user )?rates|total (?:throughput|rate)|(?:network |cell )?throughput)$)");
  static const std::regex none1(
      R"(^(?:there (?:are|is) )?no (?:minimum )?(?:data )?rate (?:requirements?|constraints?|guarantees?)$)");
  static const std::regex none2(R"(^no minimum (?:rates?|requirements?)$)");
  static const std::regex full1(R"(^(?:please )?(?:use |enter |switch to |go to )?full power(?: mode)?$)");
  static const std::regex full2(R"(^(?:please )?keep (?:all|every) o ?rus? (?:on|active|powered)$)");
  static const std::regex g1("^(?:please )?(?:guarantee|ensure|provide|give|deliver|secure)(?: a minimum of| at least| a minimum rate of| minimum rates? of| a rate of)? " +
                             kNum + " " + kUnit + " (?:for|to) (?:the )?" + kUsers + "$");
  static const std::regex g2("^(?:the )?" + kUsers +
                             " (?:needs?|requires?|must (?:get|receive|have)|should (?:get|receive)) (?:at least |a minimum of )?" +
                             kNum + " " + kUnit + "$");
  static const std::regex g3("^(?:set )?(?:the )?minimum (?:data )?rate (?:of|for) (?:the )?" + kUsers +
                             " (?:to|is|at|=) " + kNum + " " + kUnit + "$");

  std::smatch m;
  if (std::regex_match(c, es1) || std::regex_match(c, es2)) return d.energy_saving = true;
  if (std::regex_match(c, log1) || std::regex_match(c, log2)) return set_utility(d, UtilityKind::SumLogRate, c);
  if (std::regex_match(c, sum1)) return set_utility(d, UtilityKind::SumRate, c);
  if (std::regex_match(c, none1) || std::regex_match(c, none2)) return d.no_minimum = true;
  if (std::regex_match(c, full1) || std::regex_match(c, full2)) return d.full_power = true;
  if (std::regex_match(c, m, g1)) {
    d.guarantees.emplace_back(parse_users(m[3]), to_mbps(std::stod(m[1]), m[2]));
    return true;
  }
  if (std::regex_match(c, m, g2)) {
    d.guarantees.emplace_back(parse_users(m[1]), to_mbps(std::stod(m[2]), m[3]));
    return true;
  }
  if (std::regex_match(c, m, g3)) {
    d.guarantees.emplace_back(parse_users(m[1]), to_mbps(std::stod(m[2]), m[3]));
    return true;
  }
  return false;
}

/// Whole clause first, then splits at " and " / ", " where both halves parse.
bool parse_compound(const std::string& c, Draft& d) {
  Draft trial = d;
  if (parse_clause(c, trial)) {
    d = trial;
    return true;
  }
  for (const std::string sep : {", and ", " and then ", " and ", ", then ", ", "}) {
    for (std::size_t pos = c.find(sep); pos != std::string::npos; pos = c.find(sep, pos + 1)) {
      Draft split = d;
      if (parse_compound(c.substr(0, pos), split) && parse_compound(c.substr(pos + sep.size()), split)) {
        d = split;
        return true;
      }
    }
  }
  return false;
}

}  // namespace

ObjectiveSpec GrammarBackend::translate(const std::string& text, int num_users) {
  require(num_users >= 1, "intent translation needs at least one user");
  const auto sentences = split_sentences(text);
  if (sentences.empty()) throw IntentRejected("empty intent");

  Draft d;
  for (const auto& s : sentences)
    if (!parse_compound(s, d)) throw IntentRejected("unrecognized clause: '" + s + "'");

  if (d.energy_saving && d.full_power)
    throw IntentRejected("conflicting intent: energy saving and full power requested together");
  if (d.no_minimum && !d.guarantees.empty())
    throw IntentRejected("conflicting intent: 'no minimum rate' together with a rate guarantee");

  ObjectiveSpec spec;
  spec.utility = d.utility.value_or(UtilityKind::SumRate);
  spec.energy_saving = d.energy_saving;
  spec.r_min_mbps.assign(static_cast<std::size_t>(num_users), 0.0);
  for (const auto& [users, mbps] : d.guarantees) {
    if (users.empty()) {
      std::fill(spec.r_min_mbps.begin(), spec.r_min_mbps.end(), mbps);
      continue;
    }
    for (int u : users) {
      if (u < 1 || u > num_users)
        throw IntentRejected("user " + std::to_string(u) + " does not exist (users are 1.." +
                             std::to_string(num_users) + ")");
      spec.r_min_mbps[static_cast<std::size_t>(u - 1)] = mbps;
    }
  }
  sync_monitored(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// remote

RemoteBackend::RemoteBackend(std::string host, int port, std::string path, int timeout_ms)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_ms_(timeout_ms) {
  require(port_ > 0 && port_ < 65536, "remote backend port out of range");
  require(timeout_ms_ > 0, "remote backend timeout must be positive");
}

std::string RemoteBackend::prompt_template() {
  return "You translate a network operator's intent for a cell-free O-RAN into a JSON object with "
         "exactly these fields: schema (\"cfran.objective.v1\"), utility (\"sum_rate\" or "
         "\"sum_log_rate\"), energy_saving (boolean), r_min_mbps (array of num_users non-negative "
         "numbers, user 1 first), monitor (array of {user, mbps} for every user with a positive "
         "minimum rate, ascending). Energy-saving intents use sum_rate. Reply with the JSON object only.";
}

ObjectiveSpec RemoteBackend::parse_response(const std::string& body, int num_users) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("response is not JSON: ") + e.what());
  }
  ObjectiveSpec s = ObjectiveSpec::from_json(j);
  if (s.num_users() != num_users)
    throw FormatError("response r_min_mbps has " + std::to_string(s.num_users()) + " entries, expected " +
                      std::to_string(num_users));
  return s;
}

ObjectiveSpec RemoteBackend::translate(const std::string& text, int num_users) {
  fell_back_ = false;
  reason_.clear();
  try {
    httplib::Client cli(host_, port_);
    const auto ms = std::chrono::milliseconds(timeout_ms_);
    cli.set_connection_timeout(ms);
    cli.set_read_timeout(ms);
    cli.set_write_timeout(ms);
    const nlohmann::json req{{"schema", kRequestSchema},
                             {"prompt", prompt_template()},
                             {"text", text},
                             {"num_users", num_users}};
    auto res = cli.Post(path_, req.dump(), "application/json");
    if (!res) throw FormatError("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw FormatError("HTTP status " + std::to_string(res->status));
    return parse_response(res->body, num_users);
  } catch (const FormatError& e) {
    fell_back_ = true;
    reason_ = e.what();
  }
  return fallback_.translate(text, num_users);
}

void publish_supervisor_messages(const Translation& t, const Intent& intent, MessageBus& bus) {
  const nlohmann::json spec_json = t.spec.to_json();
  auto send = [&](const char* to, const std::string& text) {
    Message m;
    m.loop = intent.loop;
    m.iface = Interface::A1;
    m.sender = agent_names::kSupervisor;
    m.receiver = to;
    m.kind = "objective";
    m.text = text;
    m.body = {{"intent", intent.text}, {"objective", spec_json}, {"backend", t.backend}, {"fell_back", t.fell_back}};
    bus.publish(std::move(m));
  };
  send(agent_names::kUserWeighting, t.messages.user_weighting);
  send(agent_names::kOruManagement, t.messages.oru_management);
  send(agent_names::kMonitoring, t.messages.monitoring);
}

Translation translate_intent(const Intent& intent, IntentBackend& backend, int num_users, MessageBus* bus) {
  if (intent.text.find_first_not_of(" \t\r\n") == std::string::npos) throw IntentRejected("empty intent");
  Translation t;
  t.spec = backend.translate(intent.text, num_users);
  t.backend = backend.name();
  if (auto* remote = dynamic_cast<RemoteBackend*>(&backend)) {
    t.fell_back = remote->last_fell_back();
    t.fallback_reason = remote->last_fallback_reason();
  }
  t.messages = render_messages(t.spec);
  if (bus) publish_supervisor_messages(t, intent, *bus);
  return t;
}

}  // namespace cfran
