#include "lakegrid/overlay/event_loop.hpp"

#include <cstdio>
#include <exception>

#include "lakegrid/common/error.hpp"

namespace lakegrid::overlay {

namespace {

void run_guarded(const EventLoop::Task& task) {
  try {
    task();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "event loop task failed: %s\n", e.what());
  }
}

}  // namespace

EventLoop::EventLoop() { thread_ = std::thread([this] { run(); }); }

EventLoop::~EventLoop() { stop(); }

void EventLoop::post(Task task) {
  std::lock_guard lock(mu_);
  if (stopping_) return;
  tasks_.push_back(std::move(task));
  cv_.notify_one();
}

EventLoop::TimerId EventLoop::post_after(std::chrono::milliseconds delay, Task task) {
  std::lock_guard lock(mu_);
  auto id = next_timer_++;
  if (stopping_) return id;
  timers_.emplace(std::chrono::steady_clock::now() + delay, std::make_pair(id, std::move(task)));
  cv_.notify_one();
  return id;
}

void EventLoop::cancel(TimerId id) {
  std::lock_guard lock(mu_);
  for (auto it = timers_.begin(); it != timers_.end(); ++it) {
    if (it->second.first == id) {
      timers_.erase(it);
      return;
    }
  }
}

void EventLoop::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_ && !thread_.joinable()) return;
    stopping_ = true;
    cv_.notify_all();
  }
  if (thread_.joinable()) {
    if (in_loop()) throw Error(ErrorKind::Internal, "event loop cannot stop itself");
    thread_.join();
  }
  std::lock_guard lock(mu_);
  tasks_.clear();
  timers_.clear();
}

void EventLoop::run() {
  std::unique_lock lock(mu_);
  while (!stopping_) {
    auto now = std::chrono::steady_clock::now();
    if (!timers_.empty() && timers_.begin()->first <= now) {
      auto task = std::move(timers_.begin()->second.second);
      timers_.erase(timers_.begin());
      lock.unlock();
      run_guarded(task);
      lock.lock();
      continue;
    }
    if (!tasks_.empty()) {
      auto task = std::move(tasks_.front());
      tasks_.pop_front();
      lock.unlock();
      run_guarded(task);
      lock.lock();
      continue;
    }
    if (timers_.empty()) {
      cv_.wait(lock);
    } else {
      cv_.wait_until(lock, timers_.begin()->first);
    }
  }
}

}  // namespace lakegrid::overlay
