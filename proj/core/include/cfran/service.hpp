#pragma once

// HTTP front end for a running scenario: intent submission, state polling
// and a server-sent event stream of snapshots and bus messages. Wire
// schemas are listed in docs/wire.md.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfran/runtime.hpp"

namespace cfran {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  int period_ms = 1000;
  bool start_paused = false;
  std::string allow_origin = "*";
  /// Keep-alive comment interval on idle event streams.
  int keepalive_ms = 15000;
};

struct ServerEvent {
  std::string name;  ///< "hello", "snapshot", "message" or "end"
  nlohmann::json data;

  /// One SSE frame: "event: <name>\ndata: <json>\n\n".
  std::string frame() const;
};

/// Fan-out queue: every subscriber sees every event published after it
/// subscribed, in publish order.
class EventHub {
 public:
  class Subscription {
   public:
    /// Waits up to `timeout` for the next event. Empty on timeout or once
    /// the hub is closed and drained.
    std::optional<ServerEvent> next(std::chrono::milliseconds timeout);
    bool closed() const;

   private:
    friend class EventHub;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<ServerEvent> queue_;
    bool closed_ = false;
  };

  /// `greeting`, when given, is queued ahead of any later event.
  std::shared_ptr<Subscription> subscribe(std::optional<ServerEvent> greeting = std::nullopt);
  void unsubscribe(const std::shared_ptr<Subscription>& sub);
  void publish(const ServerEvent& event);
  /// Ends every stream after its queued events.
  void close();
  std::size_t subscribers() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<Subscription>> subs_;
  bool closed_ = false;
};

class Service {
 public:
  /// Hooks into the runner's bus and snapshot callbacks, so the runner must
  /// not step after the service is gone.
  Service(ScenarioRunner& runner, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts the HTTP and loop threads. Throws FormatError when the
  /// address cannot be bound.
  void start();
  /// Stops both threads and closes open event streams.
  void stop();
  /// Blocks until the scenario has run its last loop or stop() is called.
  void wait();
  /// As wait(), bounded; true once the run is over.
  bool wait_for(std::chrono::milliseconds timeout);

  void pause();
  void resume();
  bool paused() const { return paused_.load(); }

  int port() const { return port_; }
  EventHub& hub() { return hub_; }

 private:
  struct Http;

  void loop_thread();

  ScenarioRunner& runner_;
  ServiceConfig config_;
  EventHub hub_;
  std::unique_ptr<Http> http_;
  std::thread http_thread_;
  std::thread loop_thread_;
  std::atomic<bool> paused_{false};
  std::atomic<bool> stopping_{false};
  std::atomic<bool> done_{false};
  std::mutex mutex_;
  std::condition_variable cv_;
  int port_ = 0;
};

}  // namespace cfran
