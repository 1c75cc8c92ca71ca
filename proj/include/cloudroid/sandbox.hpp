#ifndef CLOUDROID_SANDBOX_HPP
#define CLOUDROID_SANDBOX_HPP

#include <cloudroid/choreographer.hpp>
#include <cloudroid/protocol.hpp>
#include <cloudroid/scheduler.hpp>
#include <cloudroid/workload.hpp>

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace cloudroid {

  using EnvelopeSink = std::function<void(const protocol::Envelope&)>;

  // An isolated servant. Traffic enters through submit() and leaves through
  // the per-call reply sink (responses/errors) or the outbound sink (topic
  // publishes). Every call id gets exactly one reply, including on stop().
  class Sandbox {
  public:
    virtual ~Sandbox() = default;

    virtual const std::string& servant_id() const = 0;
    virtual void submit(protocol::Envelope in, EnvelopeSink reply) = 0;
    // Idempotent. Pending calls are answered with error(terminating).
    virtual void stop() = 0;
    virtual bool stopped() const = 0;
    virtual std::size_t in_flight() const = 0;

    // Blocking convenience for wall-clock schedulers. Must not be used with a
    // VirtualScheduler driven from the same thread.
    protocol::Envelope execute(const protocol::Envelope& call);
  };

  // Builtin workload with a single logical worker: requests are served FIFO,
  // each occupying the modeled service time on the scheduler. Must be owned
  // by a shared_ptr; timers hold it weakly.
  class BuiltinSandbox final : public Sandbox, public std::enable_shared_from_this<BuiltinSandbox> {
  public:
    BuiltinSandbox(std::string servant_id, PackageManifest manifest, ResourceQuota quota, Scheduler& scheduler,
                   EnvelopeSink outbound);

    const std::string& servant_id() const override { return _servant_id; }
    void submit(protocol::Envelope in, EnvelopeSink reply) override;
    void stop() override;
    bool stopped() const override;
    std::size_t in_flight() const override;

    std::uint64_t frames_stored() const;

  private:
    struct Job {
      protocol::Envelope in;
      EnvelopeSink reply;
    };

    struct Delivery {
      std::vector<protocol::Envelope> replies;
      EnvelopeSink reply;
    };

    void start_next_locked(std::vector<std::function<void()>>& deferred);
    void finish(std::uint64_t generation);

    std::string _servant_id;
    Scheduler& _scheduler;
    EnvelopeSink _outbound;

    mutable std::mutex _mutex;
    std::optional<WorkloadEngine> _engine;
    std::deque<Job> _queue;
    std::optional<Job> _current;
    std::optional<Delivery> _current_result;
    TimerId _timer = 0;
    std::uint64_t _generation = 0;
    bool _stopped = false;
  };

  // Child process speaking newline-delimited envelopes on stdin/stdout.
  class ExternalProcessSandbox final : public Sandbox {
  public:
    // Spawns the command and performs the ping/pong handshake. Throws
    // WorkloadLaunchError if either fails within `handshake_timeout_ms`.
    ExternalProcessSandbox(std::string servant_id, const PackageManifest& manifest, ResourceQuota quota,
                           EnvelopeSink outbound, int handshake_timeout_ms = 5000);
    ~ExternalProcessSandbox() override;

    const std::string& servant_id() const override { return _servant_id; }
    void submit(protocol::Envelope in, EnvelopeSink reply) override;
    void stop() override;
    bool stopped() const override;
    std::size_t in_flight() const override;

    int pid() const { return _pid; }

  private:
    void read_loop();
    void write_line(const std::string& line);
    void fail_pending(std::string_view detail);
    void reap();

    std::string _servant_id;
    EnvelopeSink _outbound;
    int _pid = -1;
    int _to_child = -1;
    int _from_child = -1;
    std::string _buffer;

    mutable std::mutex _mutex;
    std::mutex _write_mutex;
    std::map<std::string, EnvelopeSink> _pending;
    bool _stopped = false;
    bool _reaped = false;
    std::thread _reader;
  };

  // Builds the sandbox matching the manifest's workload kind.
  std::shared_ptr<Sandbox> start_sandbox(const ServantRecord& record, const PackageManifest& manifest,
                                         Scheduler& scheduler, EnvelopeSink outbound);

  // Splits a command line on whitespace; double quotes group words.
  std::vector<std::string> split_command(std::string_view command);

} // namespace cloudroid

#endif
