#include "lakegrid/common/event_log.hpp"

#include <sstream>

namespace lakegrid {

void EventLog::append(std::int64_t t_ms, std::string source, std::string kind, std::string detail) {
  std::lock_guard lock(mu_);
  events_.push_back(Event{events_.size(), t_ms, std::move(source), std::move(kind), std::move(detail)});
}

std::vector<Event> EventLog::snapshot() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<Event> EventLog::filter(const std::string& kind) const {
  std::lock_guard lock(mu_);
  std::vector<Event> out;
  for (const auto& e : events_) {
    if (e.kind == kind) out.push_back(e);
  }
  return out;
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

std::string EventLog::to_text() const {
  std::ostringstream out;
  for (const auto& e : snapshot()) {
    out << e.seq << ' ' << e.t_ms << ' ' << e.source << ' ' << e.kind;
    if (!e.detail.empty()) out << ' ' << e.detail;
    out << '\n';
  }
  return out.str();
}

}  // namespace lakegrid
