#ifndef CLOUDROID_SCHEDULER_HPP
#define CLOUDROID_SCHEDULER_HPP

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

namespace cloudroid {

  using TimerId = std::uint64_t;
  using Task = std::function<void()>;

  // Time source and timer service. Every modeled delay in the runtime (service
  // time, network transfer, keepalive, request timeouts) goes through one of
  // these, which is what lets the same code run in wall-clock or virtual time.
  class Scheduler {
  public:
    virtual ~Scheduler() = default;

    // Milliseconds since the scheduler's epoch.
    virtual double now_ms() const = 0;

    virtual TimerId after(double delay_ms, Task task) = 0;

    // True if the timer was pending and will not fire.
    virtual bool cancel(TimerId id) = 0;
  };

  // Discrete-event scheduler. Tasks run on the caller's thread inside run*();
  // ties at equal time fire in scheduling order.
  class VirtualScheduler final : public Scheduler {
  public:
    double now_ms() const override;
    TimerId after(double delay_ms, Task task) override;
    bool cancel(TimerId id) override;

    // Runs until the queue drains or `limit` tasks have fired. Returns the count.
    std::size_t run(std::size_t limit = SIZE_MAX);
    // Runs every task due at or before `time_ms`, then advances the clock there.
    std::size_t run_until(double time_ms);
    // Runs until `done()` holds (checked after each task) or the queue drains.
    bool run_while(const std::function<bool()>& keep_going);

    std::size_t pending() const;

  private:
    bool step();

    mutable std::mutex _mutex;
    double _now = 0;
    TimerId _next_id = 1;
    // (time, id) gives FIFO among equal times since ids are monotonic
    std::map<std::pair<double, TimerId>, Task> _queue;
    std::map<TimerId, double> _index;
  };

  // Wall-clock scheduler backed by a single dispatch thread.
  class RealScheduler final : public Scheduler {
  public:
    RealScheduler();
    ~RealScheduler() override;

    RealScheduler(const RealScheduler&) = delete;
    RealScheduler& operator=(const RealScheduler&) = delete;

    double now_ms() const override;
    TimerId after(double delay_ms, Task task) override;
    bool cancel(TimerId id) override;

    // Drops pending timers and joins the dispatch thread.
    void shutdown();

  private:
    using Clock = std::chrono::steady_clock;

    void loop();

    Clock::time_point _epoch;
    std::mutex _mutex;
    std::condition_variable _cv;
    bool _stopping = false;
    TimerId _next_id = 1;
    std::map<std::pair<Clock::time_point, TimerId>, Task> _queue;
    std::map<TimerId, Clock::time_point> _index;
    std::thread _thread;
  };

} // namespace cloudroid

#endif
