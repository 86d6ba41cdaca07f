#pragma once

// In-process stand-in for the A1 (non-RT -> near-RT) and E2 (near-RT <->
// RAN) interfaces. Delivery is synchronous and ordered per sender; every
// message can be mirrored to an append-only JSON-lines run record.

#include <cstdint>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cfran {

enum class Interface { A1, E2, Internal };

std::string_view to_string(Interface iface);

namespace agent_names {
inline constexpr const char* kSupervisor = "supervisor";
inline constexpr const char* kUserWeighting = "user_weighting";
inline constexpr const char* kOruManagement = "oru_management";
inline constexpr const char* kMonitoring = "monitoring";
inline constexpr const char* kPrecoder = "precoder";
}  // namespace agent_names

struct Message {
  std::uint64_t seq = 0;  ///< assigned by the bus, strictly increasing
  int loop = 0;
  Interface iface = Interface::Internal;
  std::string sender;
  std::string receiver;
  std::string kind;      ///< e.g. "objective", "monitor_decision"
  std::string text;      ///< human-readable content
  nlohmann::json body;   ///< structured content

  nlohmann::json to_json() const;
};

class MessageBus {
 public:
  using Handler = std::function<void(const Message&)>;

  MessageBus() = default;
  MessageBus(const MessageBus&) = delete;
  MessageBus& operator=(const MessageBus&) = delete;

  /// Appends every delivered message as one JSON line; truncates the file.
  void open_record(const std::string& path);
  void close_record();

  /// Returns the assigned sequence number.
  std::uint64_t publish(Message message);
  /// Handler for messages addressed to `receiver` ("*" for all). Handlers
  /// run on the publishing thread, under the bus lock.
  void subscribe(const std::string& receiver, Handler handler);

  std::vector<Message> messages() const;
  std::vector<Message> messages_for(const std::string& receiver) const;
  std::size_t size() const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<Message> log_;
  std::vector<std::pair<std::string, Handler>> handlers_;
  std::ofstream record_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace cfran
