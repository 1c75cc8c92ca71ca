#ifndef CLOUDROID_STUB_HPP
#define CLOUDROID_STUB_HPP

#include <cloudroid/protocol.hpp>
#include <cloudroid/satisfaction.hpp>
#include <cloudroid/scheduler.hpp>
#include <cloudroid/stubgen.hpp>

#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace cloudroid {

  // Frame transport between a stub and the portal.
  class RemoteChannel {
  public:
    using Receiver = std::function<void(std::string)>;

    virtual ~RemoteChannel() = default;

    virtual void set_receiver(Receiver receiver) = 0;
    virtual void send(std::string frame) = 0;

    // False once the transport knows its connection is gone.
    virtual bool connected() const { return true; }
    // Tries to open a fresh connection (and thus a fresh portal session).
    virtual bool reconnect() { return false; }
  };

  struct StubConfig {
    std::optional<std::int64_t> t_desire_ms;
    std::optional<std::int64_t> t_max_ms;
    std::optional<std::int64_t> q_threshold;
    std::int64_t local_cpu_millicores = 1000;
    double keepalive_interval_ms = 2000;
    int keepalive_misses = 3;
  };

  enum class Winner { remote, local };
  std::string_view to_string(Winner w);

  // What the caller receives for one invoke.
  struct RequestOutcome {
    std::string request_id;
    std::optional<double> t_remote_ms; // unset if not yet known, timed out, or never sent
    bool remote_timed_out = false;
    std::optional<double> t_local_ms;
    Winner winner = Winner::remote;
    bool local_raced = false; // the local copy was racing when the request was issued
    protocol::Envelope reply;
    Bytes result; // decoded (decompressed) response payload
  };

  // Complete account of a request once both sides are resolved.
  struct RequestRecord {
    std::uint64_t seq = 0; // 0-based issue order
    std::string request_id;
    double issued_ms = 0;
    double delivered_ms = 0;
    bool remote_sent = false;
    bool remote_timed_out = false;
    std::optional<double> t_remote_ms;
    std::optional<double> t_local_ms;
    bool local_raced = false;
    Winner winner = Winner::remote;
    bool failed = false; // the caller received an error
    double q_after = 0;
    LocalAction action = LocalAction::none;
  };

  // Client-side proxy for one deployed service. Calls go to the granted
  // servant; the local copy races them while the satisfaction policy asks for
  // it and takes over entirely while the link is down. All timing runs on the
  // given scheduler.
  class Stub {
  public:
    // Exactly one of outcome/error is set.
    struct Completion {
      std::optional<RequestOutcome> outcome;
      std::exception_ptr error;
    };
    using InvokeCallback = std::function<void(Completion)>;
    using SettledListener = std::function<void(const RequestRecord&)>;
    using TopicHandler = std::function<void(const Bytes&)>;

    // Throws ValidationError when no SLA times are available from the config
    // or the descriptor defaults.
    Stub(StubDescriptor descriptor, StubConfig config, Scheduler& scheduler, std::shared_ptr<RemoteChannel> channel);
    ~Stub();

    Stub(const Stub&) = delete;
    Stub& operator=(const Stub&) = delete;

    // Sends the SLA handshake and starts the keepalive.
    void start();
    // Stops timers and the local copy; undelivered requests fail with ServiceDown.
    void shutdown();

    // Issues an RPC. `payload` is the canonical encoding of the request schema;
    // the stub applies the descriptor's compression. Throws UnknownTarget or
    // SchemaError synchronously; everything else arrives through `done`.
    std::string call_async(const std::string& target, const Bytes& payload, InvokeCallback done);
    // Blocking variant for wall-clock schedulers only.
    RequestOutcome call(const std::string& target, const Bytes& payload);

    void publish(const std::string& topic, const Bytes& payload);
    void subscribe(const std::string& topic, TopicHandler handler);

    void on_settled(SettledListener listener);

    const StubDescriptor& descriptor() const;
    SatisfactionState satisfaction() const;
    StubMode mode() const;
    bool granted() const;
    std::string servant_id() const;
    std::uint64_t late_replies_discarded() const;
    bool local_copy_running() const;

  private:
    struct Impl;
    std::shared_ptr<Impl> _impl;
  };

} // namespace cloudroid

#endif
