#include "cfran/service.hpp"

#include <algorithm>

#include "cfran/error.hpp"
#include "cfran/intent.hpp"

// after the Eigen-using headers
#include <httplib.h>

namespace cfran {

namespace {

constexpr const char* kAckSchema = "cfran.intent_ack.v1";
constexpr const char* kErrorSchema = "cfran.error.v1";
constexpr const char* kHealthSchema = "cfran.health.v1";
constexpr const char* kHelloSchema = "cfran.hello.v1";

nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"schema", kErrorSchema}, {"code", code}, {"message", message}};
}

}  // namespace

std::string ServerEvent::frame() const { return "event: " + name + "\ndata: " + data.dump() + "\n\n"; }

// ---------------------------------------------------------------------------
// hub

std::optional<ServerEvent> EventHub::Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  ServerEvent e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

bool EventHub::Subscription::closed() const {
  std::lock_guard lock(mutex_);
  return closed_ && queue_.empty();
}

std::shared_ptr<EventHub::Subscription> EventHub::subscribe(std::optional<ServerEvent> greeting) {
  auto sub = std::make_shared<Subscription>();
  if (greeting) sub->queue_.push_back(std::move(*greeting));
  std::lock_guard lock(mutex_);
  sub->closed_ = closed_;
  subs_.push_back(sub);
  return sub;
}

void EventHub::unsubscribe(const std::shared_ptr<Subscription>& sub) {
  std::lock_guard lock(mutex_);
  subs_.erase(std::remove(subs_.begin(), subs_.end(), sub), subs_.end());
}

void EventHub::publish(const ServerEvent& event) {
  std::lock_guard lock(mutex_);
  for (const auto& s : subs_) {
    {
      std::lock_guard sl(s->mutex_);
      s->queue_.push_back(event);
    }
    s->cv_.notify_one();
  }
}

void EventHub::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  for (const auto& s : subs_) {
    {
      std::lock_guard sl(s->mutex_);
      s->closed_ = true;
    }
    s->cv_.notify_all();
  }
}

std::size_t EventHub::subscribers() const {
  std::lock_guard lock(mutex_);
  return subs_.size();
}

// ---------------------------------------------------------------------------
// service

struct Service::Http {
  httplib::Server server;
};

Service::Service(ScenarioRunner& runner, ServiceConfig config)
    : runner_(runner), config_(std::move(config)), http_(std::make_unique<Http>()) {
  require(config_.period_ms >= 0, "period_ms must be non-negative");
  require(config_.port >= 0 && config_.port < 65536, "port out of range");
  paused_ = config_.start_paused;

  runner_.bus().subscribe("*", [this](const Message& m) { hub_.publish({"message", m.to_json()}); });
  runner_.on_snapshot([this](const LoopSnapshot& s) { hub_.publish({"snapshot", s.to_json()}); });

  auto& srv = http_->server;
  const std::string origin = config_.allow_origin;
  srv.set_default_headers({{"Access-Control-Allow-Origin", origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  auto send_json = [](httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  srv.Get("/v1/health", [this, send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200,
              {{"schema", kHealthSchema},
               {"status", "ok"},
               {"scenario", runner_.scenario().name},
               {"scenario_hash", runner_.scenario().hash()},
               {"mode", std::string(to_string(runner_.mode()))},
               {"num_users", runner_.scenario().network.num_users},
               {"num_orus", runner_.scenario().network.num_orus},
               {"loops", runner_.scenario().loops},
               {"next_loop", runner_.next_loop()},
               {"paused", paused_.load()},
               {"finished", runner_.finished()}});
  });

  srv.Get("/v1/state", [this, send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, runner_.latest().to_json());
  });

  srv.Post("/v1/intent", [this, send_json](const httplib::Request& req, httplib::Response& res) {
    std::string text;
    try {
      const auto j = nlohmann::json::parse(req.body);
      if (!j.is_object() || !j.contains("text") || !j.at("text").is_string())
        return send_json(res, 400, error_body("bad_request", "body must be an object with a string 'text'"));
      text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      return send_json(res, 400, error_body("bad_request", std::string("body is not JSON: ") + e.what()));
    }
    if (runner_.finished()) return send_json(res, 409, error_body("finished", "the scenario has run all its loops"));
    try {
      const int at = runner_.next_loop();
      const Translation t = runner_.submit(text);
      send_json(res, 202,
                {{"schema", kAckSchema},
                 {"accepted", true},
                 {"text", text},
                 {"apply_at_loop", at},
                 {"objective", t.spec.to_json()},
                 {"messages",
                  {{"user_weighting", t.messages.user_weighting},
                   {"oru_management", t.messages.oru_management},
                   {"monitoring", t.messages.monitoring}}},
                 {"backend", t.backend},
                 {"fell_back", t.fell_back},
                 {"fallback_reason", t.fallback_reason}});
    } catch (const IntentRejected& e) {
      send_json(res, 422, error_body("intent_rejected", e.what()));
    } catch (const InvalidArgument& e) {
      send_json(res, 422, error_body("not_servable", e.what()));
    }
  });

  auto control = [this, send_json](bool pause) {
    return [this, send_json, pause](const httplib::Request&, httplib::Response& res) {
      pause ? this->pause() : resume();
      send_json(res, 200, {{"schema", kHealthSchema}, {"status", "ok"}, {"paused", paused_.load()},
                           {"next_loop", runner_.next_loop()}, {"finished", runner_.finished()}});
    };
  };
  srv.Post("/v1/pause", control(true));
  srv.Post("/v1/resume", control(false));

  srv.Get("/v1/events", [this](const httplib::Request&, httplib::Response& res) {
    auto sub = hub_.subscribe(ServerEvent{"hello",
                            {{"schema", kHelloSchema},
                             {"scenario", runner_.scenario().name},
                             {"mode", std::string(to_string(runner_.mode()))},
                             {"next_loop", runner_.next_loop()},
                             {"loops", runner_.scenario().loops}}});
    res.set_header("Cache-Control", "no-cache");
    const auto keepalive = std::chrono::milliseconds(std::max(1, config_.keepalive_ms));
    res.set_chunked_content_provider(
        "text/event-stream",
        [sub, keepalive](std::size_t, httplib::DataSink& sink) {
          auto event = sub->next(keepalive);
          if (event) {
            const std::string f = event->frame();
            return sink.write(f.data(), f.size());
          }
          if (sub->closed()) {
            sink.done();
            return true;
          }
          static const std::string ping = ": keepalive\n\n";
          return sink.write(ping.data(), ping.size());
        },
        [this, sub](bool) { hub_.unsubscribe(sub); });
  });
}

Service::~Service() { stop(); }

void Service::start() {
  auto& srv = http_->server;
  if (config_.port == 0) {
    port_ = srv.bind_to_any_port(config_.host);
  } else {
    port_ = srv.bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) throw FormatError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  http_thread_ = std::thread([this] { http_->server.listen_after_bind(); });
  loop_thread_ = std::thread([this] { loop_thread(); });
}

void Service::loop_thread() {
  const auto period = std::chrono::milliseconds(config_.period_ms);
  while (!stopping_) {
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !paused_; });
    }
    if (stopping_) break;
    if (runner_.finished()) break;
    const auto t0 = std::chrono::steady_clock::now();
    runner_.step();
    if (runner_.finished()) break;
    std::unique_lock lock(mutex_);
    cv_.wait_until(lock, t0 + period, [&] { return stopping_.load(); });
  }
  hub_.publish({"end", {{"next_loop", runner_.next_loop()}, {"finished", runner_.finished()}}});
  hub_.close();
  {
    std::lock_guard lock(mutex_);
    done_ = true;
  }
  cv_.notify_all();
}

void Service::wait() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return done_.load(); });
}

bool Service::wait_for(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return done_.load(); });
}

void Service::pause() { paused_ = true; }

void Service::resume() {
  {
    std::lock_guard lock(mutex_);
    paused_ = false;
  }
  cv_.notify_all();
}

void Service::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (loop_thread_.joinable()) loop_thread_.join();
  hub_.close();
  http_->server.stop();
  if (http_thread_.joinable()) http_thread_.join();
}

}  // namespace cfran
