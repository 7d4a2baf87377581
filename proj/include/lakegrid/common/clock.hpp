#pragma once

#include <atomic>
#include <chrono>
#include <string>

namespace lakegrid {

using Millis = std::chrono::milliseconds;

/// Monotonic time source. Scheduler logic takes a Clock so unit tests can
/// drive it with virtual time.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Millis now() const = 0;
};

class SteadyClock final : public Clock {
 public:
  Millis now() const override;
};

class ManualClock final : public Clock {
 public:
  explicit ManualClock(Millis start = Millis{0}) : now_(start.count()) {}
  Millis now() const override { return Millis{now_.load()}; }
  void advance(Millis d) { now_ += d.count(); }
  void set(Millis t) { now_ = t.count(); }

 private:
  std::atomic<std::int64_t> now_;
};

using WallTime = std::chrono::time_point<std::chrono::system_clock, std::chrono::milliseconds>;

WallTime wall_now();
std::string to_rfc3339(WallTime t);
WallTime parse_rfc3339(const std::string& text);

double elapsed_ms(std::chrono::steady_clock::time_point since);

}  // namespace lakegrid
