#include <doctest.h>

#include <chrono>
#include <thread>

#include "cfran/intent.hpp"
#include "intent_paraphrases.hpp"

// after Eigen: the socket headers define macros that clash with it
#include <httplib.h>

using namespace cfran;

namespace {

const char* kEsText = "Enter the energy-saving mode. Guarantee 50 Mbps for user 3.";
const char* kUmText = "Maximize the sum of log-rates. No minimum rate requirements.";

ObjectiveSpec grammar(const std::string& text, int k = 5) {
  GrammarBackend g;
  return g.translate(text, k);
}

}  // namespace

TEST_CASE("energy-saving example translates byte-exactly") {
  GrammarBackend g;
  MessageBus bus;
  const auto t = translate_intent({kEsText, 10}, g, 5, &bus);
  CHECK(t.spec.to_json().dump() ==
        R"({"energy_saving":true,"monitor":[{"mbps":50.0,"user":3}],"r_min_mbps":[0.0,0.0,50.0,0.0,0.0],)"
        R"("schema":"cfran.objective.v1","utility":"sum_rate"})");
  CHECK(t.messages.user_weighting == "Objective: sum(r_k)\nConstraint: r_3 >= 50 Mbps");
  CHECK(t.messages.oru_management == "Objective: Energy Saving\nConstraint: r_3 >= 50 Mbps");
  CHECK(t.messages.monitoring == "Monitor: r_3 >= 50 Mbps");
  CHECK(t.backend == "grammar");
  CHECK_FALSE(t.fell_back);

  const auto msgs = bus.messages();
  REQUIRE(msgs.size() == 3);
  CHECK(msgs[0].receiver == agent_names::kUserWeighting);
  CHECK(msgs[1].receiver == agent_names::kOruManagement);
  CHECK(msgs[2].receiver == agent_names::kMonitoring);
  for (const auto& m : msgs) {
    CHECK(m.iface == Interface::A1);
    CHECK(m.sender == agent_names::kSupervisor);
    CHECK(m.loop == 10);
    CHECK(m.body["objective"] == t.spec.to_json());
  }
  CHECK(msgs[0].seq < msgs[1].seq);
  CHECK(msgs[1].seq < msgs[2].seq);
}

TEST_CASE("utility-maximization example translates byte-exactly") {
  GrammarBackend g;
  const auto t = translate_intent({kUmText, 40}, g, 5);
  CHECK(t.spec.to_json().dump() ==
        R"({"energy_saving":false,"monitor":[],"r_min_mbps":[0.0,0.0,0.0,0.0,0.0],)"
        R"("schema":"cfran.objective.v1","utility":"sum_log_rate"})");
  CHECK(t.messages.user_weighting == "Objective: sum(log(r_k))");
  CHECK(t.messages.oru_management == "Objective: Full Power");
  CHECK(t.messages.monitoring == "-");
  CHECK(t.spec.kind() == IntentKind::UtilityMaximization);
  CHECK_FALSE(t.spec.has_constraints());
}

TEST_CASE("guarantee for two users composes") {
  const auto s = grammar("Guarantee 10 Mbps for user 1 and user 2.");
  CHECK(s.r_min_mbps == std::vector<double>{10, 10, 0, 0, 0});
  CHECK_FALSE(s.energy_saving);
  CHECK(s.utility == UtilityKind::SumRate);
  CHECK(s.monitored == std::vector<RateConstraint>{{1, 10}, {2, 10}});
}

TEST_CASE("grammar variants") {
  CHECK(grammar("guarantee 2.5 mbps for all users").r_min_mbps == std::vector<double>(5, 2.5));
  CHECK(grammar("Users 2, 4 and 5 need 20 Mbps").r_min_mbps == std::vector<double>{0, 20, 0, 20, 20});
  CHECK(grammar("ensure 1 gbps to user 1").r_min_mbps[0] == 1000.0);
  CHECK(grammar("maximize the sum rate and guarantee 5 Mbps for user 5").r_min_mbps[4] == 5.0);
  CHECK(grammar("Use full power").energy_saving == false);
  // later guarantee for the same user overrides
  CHECK(grammar("Guarantee 5 Mbps for user 1. Guarantee 7 Mbps for user 1.").r_min_mbps[0] == 7.0);
}

TEST_CASE("generated paraphrases round-trip") {
  GrammarBackend g;
  int with_constraints = 0;
  int es = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = testing::make_paraphrase(seed, 5);
    INFO("text: " << p.text);
    ObjectiveSpec got;
    REQUIRE_NOTHROW(got = g.translate(p.text, 5));
    CHECK(got == p.expected);
    CHECK(ObjectiveSpec::from_json(got.to_json()) == got);
    with_constraints += p.expected.has_constraints() ? 1 : 0;
    es += p.expected.energy_saving ? 1 : 0;
  }
  // the sample covers both branches
  CHECK(with_constraints >= 5);
  CHECK(es >= 5);
  CHECK(es <= 15);
}

TEST_CASE("grammar rejections explain themselves") {
  GrammarBackend g;
  auto reason = [&](const std::string& text) {
    try {
      g.translate(text, 5);
    } catch (const IntentRejected& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  CHECK(reason("make it go fast please").find("unrecognized clause") != std::string::npos);
  CHECK(reason("Guarantee 10 Mbps for user 9.").find("user 9 does not exist") != std::string::npos);
  CHECK(reason("Enter energy saving mode. Use full power.").find("conflicting") != std::string::npos);
  CHECK(reason("No minimum rate requirements. Guarantee 1 Mbps for user 1.").find("conflicting") !=
        std::string::npos);
  CHECK(reason("Maximize the sum rate. Maximize the sum of log rates.").find("conflicting") != std::string::npos);
  CHECK(reason("   ") == "empty intent");
  CHECK_THROWS_AS(translate_intent({"", 0}, g, 5), IntentRejected);
}

TEST_CASE("objective json is strict") {
  const auto good = grammar(kEsText).to_json();
  CHECK(ObjectiveSpec::from_json(good) == grammar(kEsText));

  auto extra = good;
  extra["bonus"] = 1;
  CHECK_THROWS_AS(ObjectiveSpec::from_json(extra), FormatError);
  auto wrong_schema = good;
  wrong_schema["schema"] = "cfran.objective.v0";
  CHECK_THROWS_AS(ObjectiveSpec::from_json(wrong_schema), FormatError);
  auto negative = good;
  negative["r_min_mbps"][0] = -1.0;
  CHECK_THROWS_AS(ObjectiveSpec::from_json(negative), FormatError);
  auto mismatch = good;
  mismatch["monitor"][0]["mbps"] = 40.0;
  CHECK_THROWS_AS(ObjectiveSpec::from_json(mismatch), FormatError);
  auto es_utility = good;
  es_utility["utility"] = "energy_saving";
  CHECK_THROWS_AS(ObjectiveSpec::from_json(es_utility), FormatError);
  auto no_monitor = good;
  no_monitor.erase("monitor");
  CHECK(ObjectiveSpec::from_json(no_monitor).monitored.size() == 1);
}

TEST_CASE("format_mbps") {
  CHECK(format_mbps(50) == "50");
  CHECK(format_mbps(12.5) == "12.5");
  CHECK(format_mbps(0.125) == "0.125");
  CHECK(format_mbps(1.0 / 3.0).size() <= 12);
}

namespace {

struct FakeModel {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::string reply;
  int delay_ms = 0;
  nlohmann::json last_request;

  FakeModel() {
    server.Post("/v1/translate", [this](const httplib::Request& req, httplib::Response& res) {
      last_request = nlohmann::json::parse(req.body);
      if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      res.set_content(reply, "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeModel() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("remote backend uses a valid model reply") {
  FakeModel model;
  // the model answers something the grammar would not produce for this text
  ObjectiveSpec s;
  s.utility = UtilityKind::SumLogRate;
  s.r_min_mbps = {0, 8, 0};
  sync_monitored(s);
  model.reply = s.to_json().dump();

  RemoteBackend remote("127.0.0.1", model.port);
  const auto t = translate_intent({"Make user two comfortable.", 3}, remote, 3);
  CHECK(t.spec == s);
  CHECK_FALSE(t.fell_back);
  CHECK(t.backend == "remote");
  CHECK(model.last_request["schema"] == "cfran.intent_request.v1");
  CHECK(model.last_request["text"] == "Make user two comfortable.");
  CHECK(model.last_request["num_users"] == 3);
  CHECK(model.last_request["prompt"] == RemoteBackend::prompt_template());
}

TEST_CASE("remote backend falls back on bad replies") {
  FakeModel model;
  RemoteBackend remote("127.0.0.1", model.port, "/v1/translate", 300);
  const auto expected = grammar(kEsText, 5);

  SUBCASE("malformed json") { model.reply = "{not json"; }
  SUBCASE("schema violation") {
    auto j = expected.to_json();
    j["confidence"] = 0.9;
    model.reply = j.dump();
  }
  SUBCASE("wrong user count") {
    auto j = expected.to_json();
    j["r_min_mbps"] = {0.0, 0.0, 50.0};
    j["monitor"] = nlohmann::json::array({{{"user", 3}, {"mbps", 50.0}}});
    model.reply = j.dump();
  }
  SUBCASE("timeout") {
    model.reply = expected.to_json().dump();
    model.delay_ms = 1200;
  }
  const auto t = translate_intent({kEsText, 0}, remote, 5);
  CHECK(t.fell_back);
  CHECK_FALSE(t.fallback_reason.empty());
  CHECK(t.spec == expected);
}

TEST_CASE("remote backend falls back when unreachable") {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }  // closed again: nothing listens there now
  RemoteBackend remote("127.0.0.1", port, "/v1/translate", 300);
  const auto s = remote.translate(kUmText, 4);
  CHECK(remote.last_fell_back());
  CHECK(remote.last_fallback_reason().find("transport") != std::string::npos);
  CHECK(s.utility == UtilityKind::SumLogRate);
  CHECK(s.num_users() == 4);
}

TEST_CASE("remote backend still rejects what the grammar rejects") {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  RemoteBackend remote("127.0.0.1", port, "/v1/translate", 200);
  CHECK_THROWS_AS(remote.translate("sing a song", 4), IntentRejected);
}
