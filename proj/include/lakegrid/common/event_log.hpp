#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

namespace lakegrid {

struct Event {
  std::uint64_t seq = 0;
  std::int64_t t_ms = 0;
  std::string source;
  std::string kind;
  std::string detail;
};

/// Totally ordered, thread-safe event record shared by the scheduler, the
/// gateway and the harness. Timestamps come from whichever clock the owner
/// passes in, so a virtual-time run yields a reproducible log.
class EventLog {
 public:
  void append(std::int64_t t_ms, std::string source, std::string kind, std::string detail = {});
  std::vector<Event> snapshot() const;
  std::vector<Event> filter(const std::string& kind) const;
  std::size_t size() const;
  std::string to_text() const;

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
};

}  // namespace lakegrid
