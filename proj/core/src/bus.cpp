#include "cfran/bus.hpp"

#include "cfran/error.hpp"

namespace cfran {

std::string_view to_string(Interface iface) {
  switch (iface) {
    case Interface::A1: return "A1";
    case Interface::E2: return "E2";
    case Interface::Internal: return "internal";
  }
  return "internal";
}

nlohmann::json Message::to_json() const {
  return {{"seq", seq},       {"loop", loop}, {"interface", std::string(to_string(iface))},
          {"from", sender},   {"to", receiver}, {"kind", kind},
          {"text", text},     {"body", body}};
}

void MessageBus::open_record(const std::string& path) {
  std::lock_guard<std::mutex> lock(mutex_);
  record_.close();
  record_.open(path, std::ios::out | std::ios::trunc);
  if (!record_) throw FormatError("cannot open run record " + path);
}

void MessageBus::close_record() {
  std::lock_guard<std::mutex> lock(mutex_);
  record_.close();
}

std::uint64_t MessageBus::publish(Message message) {
  std::lock_guard<std::mutex> lock(mutex_);
  message.seq = next_seq_++;
  if (record_.is_open()) {
    record_ << message.to_json().dump() << '\n';
    record_.flush();
  }
  log_.push_back(message);
  for (const auto& [receiver, handler] : handlers_)
    if (receiver == "*" || receiver == message.receiver) handler(log_.back());
  return message.seq;
}

void MessageBus::subscribe(const std::string& receiver, Handler handler) {
  std::lock_guard<std::mutex> lock(mutex_);
  handlers_.emplace_back(receiver, std::move(handler));
}

std::vector<Message> MessageBus::messages() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return log_;
}

std::vector<Message> MessageBus::messages_for(const std::string& receiver) const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::vector<Message> out;
  for (const auto& m : log_)
    if (m.receiver == receiver) out.push_back(m);
  return out;
}

std::size_t MessageBus::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return log_.size();
}

void MessageBus::clear() {
  std::lock_guard<std::mutex> lock(mutex_);
  log_.clear();
}

}  // namespace cfran
