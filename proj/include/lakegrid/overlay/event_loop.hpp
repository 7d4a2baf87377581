#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <thread>
#include <deque>

namespace lakegrid::overlay {

/// Single-threaded executor with timers. Everything a node owns is touched
/// only from its loop thread; other threads communicate by posting.
class EventLoop {
 public:
  using Task = std::function<void()>;
  using TimerId = std::uint64_t;

  EventLoop();
  ~EventLoop();
  EventLoop(const EventLoop&) = delete;
  EventLoop& operator=(const EventLoop&) = delete;

  void post(Task task);
  TimerId post_after(std::chrono::milliseconds delay, Task task);
  void cancel(TimerId id);

  // Runs `fn` on the loop and waits for its result; runs inline when
  // already on the loop thread.
  template <typename F>
  auto call(F fn) -> decltype(fn()) {
    using R = decltype(fn());
    if (in_loop()) return fn();
    auto task = std::make_shared<std::packaged_task<R()>>(std::move(fn));
    auto fut = task->get_future();
    post([task] { (*task)(); });
    return fut.get();
  }

  bool in_loop() const { return std::this_thread::get_id() == thread_.get_id(); }
  // Drops pending work and joins the thread. Idempotent.
  void stop();

 private:
  void run();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Task> tasks_;
  std::multimap<std::chrono::steady_clock::time_point, std::pair<TimerId, Task>> timers_;
  TimerId next_timer_ = 1;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace lakegrid::overlay
