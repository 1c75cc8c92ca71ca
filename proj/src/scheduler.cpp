#include <cloudroid/scheduler.hpp>

#include <spdlog/spdlog.h>

#include <algorithm>

namespace cloudroid {

  double VirtualScheduler::now_ms() const
  {
    std::lock_guard lock(_mutex);
    return _now;
  }

  TimerId VirtualScheduler::after(double delay_ms, Task task)
  {
    std::lock_guard lock(_mutex);
    auto id = _next_id++;
    auto at = _now + std::max(0.0, delay_ms);
    _queue.emplace(std::make_pair(at, id), std::move(task));
    _index.emplace(id, at);
    return id;
  }

  bool VirtualScheduler::cancel(TimerId id)
  {
    std::lock_guard lock(_mutex);
    auto it = _index.find(id);
    if (it == _index.end())
      return false;
    _queue.erase({it->second, id});
    _index.erase(it);
    return true;
  }

  std::size_t VirtualScheduler::pending() const
  {
    std::lock_guard lock(_mutex);
    return _queue.size();
  }

  bool VirtualScheduler::step()
  {
    Task task;
    {
      std::lock_guard lock(_mutex);
      if (_queue.empty())
        return false;
      auto node = _queue.extract(_queue.begin());
      _now = node.key().first;
      _index.erase(node.key().second);
      task = std::move(node.mapped());
    }
    task();
    return true;
  }

  std::size_t VirtualScheduler::run(std::size_t limit)
  {
    std::size_t fired = 0;
    while (fired < limit && step())
      ++fired;
    return fired;
  }

  std::size_t VirtualScheduler::run_until(double time_ms)
  {
    std::size_t fired = 0;
    for (;;) {
      {
        std::lock_guard lock(_mutex);
        if (_queue.empty() || _queue.begin()->first.first > time_ms) {
          _now = std::max(_now, time_ms);
          return fired;
        }
      }
      step();
      ++fired;
    }
  }

  bool VirtualScheduler::run_while(const std::function<bool()>& keep_going)
  {
    while (keep_going()) {
      if (!step())
        return false;
    }
    return true;
  }

  RealScheduler::RealScheduler() : _epoch(Clock::now()), _thread([this] { loop(); }) {}

  RealScheduler::~RealScheduler() { shutdown(); }

  double RealScheduler::now_ms() const
  {
    return std::chrono::duration<double, std::milli>(Clock::now() - _epoch).count();
  }

  TimerId RealScheduler::after(double delay_ms, Task task)
  {
    auto at = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                               std::chrono::duration<double, std::milli>(std::max(0.0, delay_ms)));
    std::lock_guard lock(_mutex);
    auto id = _next_id++;
    if (_stopping)
      return id;
    _queue.emplace(std::make_pair(at, id), std::move(task));
    _index.emplace(id, at);
    _cv.notify_one();
    return id;
  }

  bool RealScheduler::cancel(TimerId id)
  {
    std::lock_guard lock(_mutex);
    auto it = _index.find(id);
    if (it == _index.end())
      return false;
    _queue.erase({it->second, id});
    _index.erase(it);
    return true;
  }

  void RealScheduler::shutdown()
  {
    {
      std::lock_guard lock(_mutex);
      if (_stopping && !_thread.joinable())
        return;
      _stopping = true;
      _queue.clear();
      _index.clear();
    }
    _cv.notify_all();
    if (_thread.joinable() && _thread.get_id() != std::this_thread::get_id())
      _thread.join();
  }

  void RealScheduler::loop()
  {
    std::unique_lock lock(_mutex);
    while (!_stopping) {
      if (_queue.empty()) {
        _cv.wait(lock);
        continue;
      }
      auto due = _queue.begin()->first.first;
      if (Clock::now() < due) {
        _cv.wait_until(lock, due);
        continue;
      }
      auto node = _queue.extract(_queue.begin());
      _index.erase(node.key().second);
      lock.unlock();
      try {
        node.mapped()();
      } catch (const std::exception& e) {
        spdlog::error("scheduler task threw: {}", e.what());
      }
      lock.lock();
    }
  }

} // namespace cloudroid
