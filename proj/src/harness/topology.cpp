#include "lakegrid/harness/topology.hpp"

#include <algorithm>
#include <set>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"

namespace lakegrid::harness {

void TopologySpec::validate() const {
  if (workers.empty()) throw Error(ErrorKind::Validation, "topology needs at least one worker");
  std::set<std::string> ids;
  for (const auto& w : workers) {
    if (w.id.empty()) throw Error(ErrorKind::Validation, "worker id is empty");
    if (!ids.insert(w.id).second) throw Error(ErrorKind::Validation, "duplicate worker id '" + w.id + "'");
    if (w.slots == 0) throw Error(ErrorKind::Validation, w.id + ".slots must be >= 1");
    if (w.duration_ms <= 0) throw Error(ErrorKind::Validation, w.id + ".duration_ms must be > 0");
  }
  if (group_size == 0) throw Error(ErrorKind::Validation, "group_size must be >= 1");
}

std::int64_t TopologySpec::fastest_ms() const {
  return std::min_element(workers.begin(), workers.end(),
                          [](const WorkerSpec& a, const WorkerSpec& b) { return a.duration_ms < b.duration_ms; })
      ->duration_ms;
}

std::int64_t TopologySpec::slowest_ms() const {
  return std::max_element(workers.begin(), workers.end(),
                          [](const WorkerSpec& a, const WorkerSpec& b) { return a.duration_ms < b.duration_ms; })
      ->duration_ms;
}

std::uint32_t TopologySpec::total_slots() const {
  std::uint32_t n = 0;
  for (const auto& w : workers) n += w.slots;
  return n;
}

TopologySpec TopologySpec::with_slots(std::uint32_t slots_per_worker) const {
  auto t = *this;
  for (auto& w : t.workers) w.slots = slots_per_worker;
  return t;
}

std::string TopologySpec::to_text() const {
  KeyValues kv;
  std::vector<std::string> ids;
  for (const auto& w : workers) {
    ids.push_back(w.id);
    kv.set(w.id + ".slots", std::to_string(w.slots));
    kv.set(w.id + ".duration_ms", std::to_string(w.duration_ms));
    kv.set(w.id + ".nat", std::string(overlay::to_string(w.nat)));
  }
  kv.set("workers", join(ids, ","));
  kv.set("scheduler.nat", std::string(overlay::to_string(scheduler_nat)));
  kv.set("relay", relay ? "true" : "false");
  kv.set("group_size", std::to_string(group_size));
  return kv.format();
}

TopologySpec TopologySpec::parse(std::string_view text) {
  auto kv = KeyValues::parse(text);
  TopologySpec t;
  try {
    for (const auto& raw : split(kv.get("workers"), ',')) {
      auto id = trim(raw);
      if (id.empty()) continue;
      WorkerSpec w;
      w.id = id;
      auto slots = kv.get_int(id + ".slots");
      if (slots < 1) throw Error(ErrorKind::Validation, id + ".slots must be >= 1");
      w.slots = static_cast<std::uint32_t>(slots);
      w.duration_ms = kv.get_int(id + ".duration_ms");
      w.nat = overlay::parse_nat_class(kv.get_or(id + ".nat", "OPEN"));
      t.workers.push_back(std::move(w));
    }
    t.scheduler_nat = overlay::parse_nat_class(kv.get_or("scheduler.nat", "OPEN"));
    t.relay = kv.get_bool_or("relay", true);
    auto g = kv.get_int_or("group_size", 10);
    if (g < 1) throw Error(ErrorKind::Validation, "group_size must be >= 1");
    t.group_size = static_cast<std::uint32_t>(g);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Validation) throw;
    throw Error(ErrorKind::Validation, std::string("topology: ") + e.what());
  }
  t.validate();
  return t;
}

}  // namespace lakegrid::harness
