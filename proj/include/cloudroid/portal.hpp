#ifndef CLOUDROID_PORTAL_HPP
#define CLOUDROID_PORTAL_HPP

#include <cloudroid/choreographer.hpp>
#include <cloudroid/manifest.hpp>
#include <cloudroid/protocol.hpp>
#include <cloudroid/sandbox.hpp>
#include <cloudroid/scheduler.hpp>
#include <cloudroid/stubgen.hpp>

#include <nlohmann/json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cloudroid {

  struct ServiceCatalogEntry {
    std::string service;
    PackageManifest manifest;
    std::string manifest_bytes; // canonical
    double deployed_at_ms = 0;
    StubDescriptor stub;
    std::string stub_bytes; // canonical, served verbatim
  };

  // Ordered record of lifecycle events, used to audit on-demand instantiation.
  struct TraceEvent {
    double time_ms = 0;
    std::uint64_t seq = 0;
    std::string kind; // deploy | request_service | servant_created | servant_terminated
    std::string service;
    std::string detail;
  };

  // One connected client. Sessions are created by the portal; the transport
  // feeds inbound frames to ServicePortal::handle and drains `out`.
  class Session {
  public:
    Session(std::string id, std::string peer, EnvelopeSink out);

    const std::string& id() const { return _id; }
    const std::string& peer() const { return _peer; }

    // Dropped silently once the session is closed.
    void send(const protocol::Envelope& e);

    std::map<std::string, std::string> granted() const;
    std::map<std::string, double> pending() const;

  private:
    friend class ServicePortal;

    std::string _id;
    std::string _peer;
    EnvelopeSink _out;
    mutable std::mutex _mutex;
    bool _closed = false;
    std::map<std::string, std::string> _granted; // service -> servant_id
    std::map<std::string, double> _pending;      // call id -> issue time
  };

  // Transport-independent service portal: catalog and repositories, SLA
  // handshake, routing of session traffic to servants. It is also the
  // choreographer's launcher, owning one sandbox per servant.
  class ServicePortal final : public ServantLauncher {
  public:
    struct DeployResult {
      ServiceCatalogEntry entry;
      bool created = false; // false for an idempotent redeploy
    };

    ServicePortal(SlaDictionary dictionary, NodePool pool, Scheduler& scheduler, std::string portal_url);
    ~ServicePortal() override;

    ServicePortal(const ServicePortal&) = delete;
    ServicePortal& operator=(const ServicePortal&) = delete;

    // Throws SyntaxError, ValidationError, or ConflictError (same name,
    // different content, `replace` not set). Never starts a servant.
    DeployResult deploy_package(std::string_view manifest_bytes, bool replace = false);

    std::vector<ServiceCatalogEntry> services() const;
    std::optional<ServiceCatalogEntry> service(std::string_view name) const;
    std::optional<std::string> stub_bytes(std::string_view service) const;

    std::shared_ptr<Session> open_session(std::string peer, EnvelopeSink out);
    // Detaches every servant the session holds.
    void close_session(const std::string& session_id);

    // Entry point for raw frames; decode failures are answered with an error.
    void handle(Session& session, std::string_view raw);
    void handle(Session& session, const protocol::Envelope& e);

    protocol::Envelope handle_request_service(Session& session, const protocol::Envelope& e);
    // Forwards a call/publish to the granted servant; replies reach the
    // session through its sink.
    void route(Session& session, const protocol::Envelope& e);

    std::vector<ServantRecord> servants() const;
    // Throws UnknownServant.
    void delete_servant(const std::string& servant_id);

    nlohmann::json metrics() const;
    std::vector<TraceEvent> trace() const;
    const std::string& portal_url() const { return _portal_url; }
    Choreographer& choreographer() { return _choreographer; }
    Scheduler& scheduler() { return _scheduler; }

    // Sandbox for a running servant, or nullptr.
    std::shared_ptr<Sandbox> sandbox(const std::string& servant_id) const;

    // ServantLauncher
    void start(const ServantRecord& record, const PackageManifest& manifest) override;
    void stop(const std::string& servant_id) override;

  private:
    void record(std::string kind, std::string service, std::string detail);
    void publish_from_servant(const std::string& servant_id, const protocol::Envelope& e);
    std::optional<std::pair<std::string, std::string>> find_grant(const Session& session,
                                                                  const std::string& target) const;

    Scheduler& _scheduler;
    std::string _portal_url;
    Choreographer _choreographer;

    mutable std::mutex _mutex;
    std::map<std::string, ServiceCatalogEntry, std::less<>> _catalog;
    std::map<std::string, std::shared_ptr<Session>> _sessions;
    std::map<std::string, std::set<std::string>> _servant_sessions;
    std::vector<TraceEvent> _trace;
    std::uint64_t _next_session = 1;
    std::uint64_t _trace_seq = 0;

    mutable std::mutex _sandbox_mutex;
    std::map<std::string, std::shared_ptr<Sandbox>> _sandboxes;

    struct Counters {
      std::atomic<std::uint64_t> deploys{0};
      std::atomic<std::uint64_t> sessions_opened{0};
      std::atomic<std::uint64_t> sessions_closed{0};
      std::atomic<std::uint64_t> grants{0};
      std::atomic<std::uint64_t> calls_routed{0};
      std::atomic<std::uint64_t> publishes_routed{0};
      std::atomic<std::uint64_t> responses{0};
      std::atomic<std::uint64_t> errors{0};
      std::atomic<std::uint64_t> servants_started{0};
      std::atomic<std::uint64_t> servants_stopped{0};
    };
    mutable Counters _counters;
  };

  struct RestRequest {
    std::string method;
    std::string target; // path plus optional query
    std::string body;
  };

  struct RestResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
  };

  // The management endpoint table: POST /packages, GET /services,
  // GET /services/{name}, GET /servants, DELETE /servants/{id},
  // GET /stubs/{service}, GET /metrics.
  RestResponse management_api(ServicePortal& portal, const RestRequest& request);

} // namespace cloudroid

#endif
