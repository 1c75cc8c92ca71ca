#include <cloudroid/errors.hpp>
#include <cloudroid/portal.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cloudroid {

  using protocol::Envelope;
  using protocol::Op;
  namespace codes = protocol::codes;

  Session::Session(std::string id, std::string peer, EnvelopeSink out)
      : _id(std::move(id)), _peer(std::move(peer)), _out(std::move(out))
  {}

  void Session::send(const Envelope& e)
  {
    EnvelopeSink out;
    {
      std::lock_guard lock(_mutex);
      if (_closed)
        return;
      out = _out;
    }
    if (out)
      out(e);
  }

  std::map<std::string, std::string> Session::granted() const
  {
    std::lock_guard lock(_mutex);
    return _granted;
  }

  std::map<std::string, double> Session::pending() const
  {
    std::lock_guard lock(_mutex);
    return _pending;
  }

  ServicePortal::ServicePortal(SlaDictionary dictionary, NodePool pool, Scheduler& scheduler, std::string portal_url)
      : _scheduler(scheduler), _portal_url(std::move(portal_url)),
        _choreographer(std::move(dictionary), std::move(pool), &scheduler)
  {
    _choreographer.set_launcher(this);
  }

  ServicePortal::~ServicePortal()
  {
    _choreographer.set_launcher(nullptr);
    std::map<std::string, std::shared_ptr<Sandbox>> sandboxes;
    {
      std::lock_guard lock(_sandbox_mutex);
      sandboxes.swap(_sandboxes);
    }
    for (auto& [_, sb] : sandboxes)
      sb->stop();
  }

  void ServicePortal::record(std::string kind, std::string service, std::string detail)
  {
    std::lock_guard lock(_mutex);
    _trace.push_back(TraceEvent{_scheduler.now_ms(), ++_trace_seq, std::move(kind), std::move(service), std::move(detail)});
  }

  ServicePortal::DeployResult ServicePortal::deploy_package(std::string_view manifest_bytes, bool replace)
  {
    auto manifest = parse_manifest(manifest_bytes);
    auto canonical = serialize_manifest(manifest);

    {
      std::lock_guard lock(_mutex);
      auto it = _catalog.find(manifest.name);
      if (it != _catalog.end()) {
        if (it->second.manifest_bytes == canonical)
          return {it->second, false};
        if (!replace)
          throw ConflictError(fmt::format("service '{}' is already deployed with different content", manifest.name));
      }
    }

    ServiceCatalogEntry entry;
    entry.service = manifest.name;
    entry.manifest = manifest;
    entry.manifest_bytes = canonical;
    entry.deployed_at_ms = _scheduler.now_ms();
    entry.stub = generate_stub(manifest, _portal_url);
    entry.stub_bytes = serialize_descriptor(entry.stub);

    _choreographer.register_service(manifest);
    {
      std::lock_guard lock(_mutex);
      _catalog.insert_or_assign(entry.service, entry);
    }
    ++_counters.deploys;
    record("deploy", entry.service, manifest.version);
    return {std::move(entry), true};
  }

  std::vector<ServiceCatalogEntry> ServicePortal::services() const
  {
    std::lock_guard lock(_mutex);
    std::vector<ServiceCatalogEntry> out;
    for (const auto& [_, e] : _catalog)
      out.push_back(e);
    return out;
  }

  std::optional<ServiceCatalogEntry> ServicePortal::service(std::string_view name) const
  {
    std::lock_guard lock(_mutex);
    auto it = _catalog.find(name);
    if (it == _catalog.end())
      return std::nullopt;
    return it->second;
  }

  std::optional<std::string> ServicePortal::stub_bytes(std::string_view service) const
  {
    std::lock_guard lock(_mutex);
    auto it = _catalog.find(service);
    if (it == _catalog.end())
      return std::nullopt;
    return it->second.stub_bytes;
  }

  std::shared_ptr<Session> ServicePortal::open_session(std::string peer, EnvelopeSink out)
  {
    std::lock_guard lock(_mutex);
    auto id = fmt::format("s{}", _next_session++);
    auto session = std::make_shared<Session>(id, std::move(peer), std::move(out));
    _sessions.emplace(id, session);
    ++_counters.sessions_opened;
    return session;
  }

  void ServicePortal::close_session(const std::string& session_id)
  {
    std::shared_ptr<Session> session;
    {
      std::lock_guard lock(_mutex);
      auto it = _sessions.find(session_id);
      if (it == _sessions.end())
        return;
      session = it->second;
      _sessions.erase(it);
    }
    std::map<std::string, std::string> granted;
    {
      std::lock_guard lock(session->_mutex);
      session->_closed = true;
      granted.swap(session->_granted);
    }
    for (const auto& [service, servant_id] : granted) {
      {
        std::lock_guard lock(_mutex);
        _servant_sessions[servant_id].erase(session_id);
      }
      try {
        _choreographer.detach(servant_id, session_id);
      } catch (const UnknownServant&) {
        // already released through the management API
      }
    }
    ++_counters.sessions_closed;
  }

  void ServicePortal::handle(Session& session, std::string_view raw)
  {
    Envelope e;
    try {
      e = protocol::decode(raw);
    } catch (const ProtocolError& err) {
      // echo the id when the frame was at least JSON with a string id
      std::string id;
      try {
        auto j = nlohmann::json::parse(raw.begin(), raw.end());
        if (j.is_object() && j.contains("id") && j["id"].is_string())
          id = j["id"].get<std::string>();
      } catch (const nlohmann::json::exception&) {
      }
      ++_counters.errors;
      session.send(protocol::make_error(id, "", err.code, err.what()));
      return;
    }
    handle(session, e);
  }

  void ServicePortal::handle(Session& session, const Envelope& e)
  {
    switch (e.op) {
    case Op::ping: {
      Envelope pong;
      pong.op = Op::pong;
      pong.id = e.id;
      session.send(pong);
      return;
    }
    case Op::pong:
      return;
    case Op::request_service:
      session.send(handle_request_service(session, e));
      return;
    case Op::call:
    case Op::publish:
      route(session, e);
      return;
    default:
      ++_counters.errors;
      session.send(protocol::make_error(e.id, e.target, codes::invariant,
                                        fmt::format("clients may not send '{}'", protocol::to_string(e.op))));
    }
  }

  Envelope ServicePortal::handle_request_service(Session& session, const Envelope& e)
  {
    const auto& service = e.target;
    record("request_service", service, session.id());

    // a repeated request replaces the earlier grant with a fresh one
    std::optional<std::string> previous;
    {
      std::lock_guard lock(session._mutex);
      if (auto it = session._granted.find(service); it != session._granted.end()) {
        previous = it->second;
        session._granted.erase(it);
      }
    }
    if (previous) {
      {
        std::lock_guard lock(_mutex);
        _servant_sessions[*previous].erase(session.id());
      }
      try {
        _choreographer.detach(*previous, session.id());
      } catch (const UnknownServant&) {
      }
    }

    ServantRecord rec;
    try {
      rec = _choreographer.instantiate_servant(service, session.id(), e.sla.value_or(protocol::SlaDeclaration{}));
    } catch (const UnknownService& err) {
      ++_counters.errors;
      return protocol::make_error(e.id, service, codes::unknown_service, err.what());
    } catch (const InsufficientResources& err) {
      ++_counters.errors;
      return protocol::make_error(e.id, service, codes::insufficient_resources, err.what());
    } catch (const WorkloadLaunchError& err) {
      ++_counters.errors;
      return protocol::make_error(e.id, service, codes::launch_failed, err.what());
    }

    {
      std::lock_guard lock(_mutex);
      _servant_sessions[rec.servant_id].insert(session.id());
    }
    {
      std::lock_guard lock(session._mutex);
      session._granted[service] = rec.servant_id;
    }
    ++_counters.grants;

    Envelope granted;
    granted.op = Op::service_granted;
    granted.id = e.id;
    granted.target = service;
    const auto& sid = rec.servant_id;
    granted.payload = protocol::compress_payload(
      SchemaRef::blob, ByteView(reinterpret_cast<const std::uint8_t*>(sid.data()), sid.size()), protocol::Compression::none);
    return granted;
  }

  std::optional<std::pair<std::string, std::string>> ServicePortal::find_grant(const Session& session,
                                                                               const std::string& target) const
  {
    auto granted = session.granted();
    std::lock_guard lock(_mutex);
    for (const auto& [service, servant_id] : granted) {
      auto it = _catalog.find(service);
      if (it != _catalog.end() && it->second.manifest.interface.has_target(target))
        return std::make_pair(service, servant_id);
    }
    return std::nullopt;
  }

  void ServicePortal::route(Session& session, const Envelope& e)
  {
    auto grant = find_grant(session, e.target);
    if (!grant) {
      ++_counters.errors;
      session.send(protocol::make_error(e.id, e.target, codes::no_grant,
                                        fmt::format("no service granted on this session provides '{}'", e.target)));
      return;
    }
    auto sb = sandbox(grant->second);
    if (!sb) {
      {
        std::lock_guard lock(session._mutex);
        session._granted.erase(grant->first);
      }
      ++_counters.errors;
      session.send(protocol::make_error(e.id, e.target, codes::no_grant, "granted servant is no longer running"));
      return;
    }

    std::weak_ptr<Session> weak;
    {
      std::lock_guard lock(_mutex);
      if (auto it = _sessions.find(session.id()); it != _sessions.end())
        weak = it->second;
    }

    if (e.op == Op::call) {
      bool fresh = false;
      {
        std::lock_guard lock(session._mutex);
        fresh = session._pending.emplace(e.id, _scheduler.now_ms()).second;
      }
      if (!fresh) {
        ++_counters.errors;
        session.send(protocol::make_error(e.id, e.target, codes::duplicate_id, "call id already outstanding"));
        return;
      }
      ++_counters.calls_routed;
    } else {
      ++_counters.publishes_routed;
    }

    auto id = e.id;
    sb->submit(e, [this, weak, id](const Envelope& reply) {
      auto s = weak.lock();
      if (!s)
        return;
      if (reply.op == Op::error)
        ++_counters.errors;
      else
        ++_counters.responses;
      if (!id.empty()) {
        std::lock_guard lock(s->_mutex);
        s->_pending.erase(id);
      }
      s->send(reply);
    });
  }

  void ServicePortal::publish_from_servant(const std::string& servant_id, const Envelope& e)
  {
    std::vector<std::shared_ptr<Session>> targets;
    {
      std::lock_guard lock(_mutex);
      auto it = _servant_sessions.find(servant_id);
      if (it == _servant_sessions.end())
        return;
      for (const auto& sid : it->second)
        if (auto s = _sessions.find(sid); s != _sessions.end())
          targets.push_back(s->second);
    }
    for (auto& s : targets)
      s->send(e);
  }

  std::vector<ServantRecord> ServicePortal::servants() const { return _choreographer.servants(); }

  void ServicePortal::delete_servant(const std::string& servant_id) { _choreographer.release_servant(servant_id); }

  std::shared_ptr<Sandbox> ServicePortal::sandbox(const std::string& servant_id) const
  {
    std::lock_guard lock(_sandbox_mutex);
    auto it = _sandboxes.find(servant_id);
    return it == _sandboxes.end() ? nullptr : it->second;
  }

  void ServicePortal::start(const ServantRecord& rec, const PackageManifest& manifest)
  {
    auto id = rec.servant_id;
    auto sb = start_sandbox(rec, manifest, _scheduler,
                            [this, id](const Envelope& e) { publish_from_servant(id, e); });
    {
      std::lock_guard lock(_sandbox_mutex);
      _sandboxes[id] = std::move(sb);
    }
    ++_counters.servants_started;
    record("servant_created", rec.service, id);
  }

  void ServicePortal::stop(const std::string& servant_id)
  {
    std::shared_ptr<Sandbox> sb;
    {
      std::lock_guard lock(_sandbox_mutex);
      auto it = _sandboxes.find(servant_id);
      if (it == _sandboxes.end())
        return;
      sb = std::move(it->second);
      _sandboxes.erase(it);
    }
    sb->stop();
    {
      std::lock_guard lock(_mutex);
      _servant_sessions.erase(servant_id);
    }
    ++_counters.servants_stopped;
    record("servant_terminated", "", servant_id);
  }

  nlohmann::json ServicePortal::metrics() const
  {
    std::size_t sessions = 0;
    std::size_t catalog = 0;
    {
      std::lock_guard lock(_mutex);
      sessions = _sessions.size();
      catalog = _catalog.size();
    }
    return {
      {"services", catalog},
      {"sessions_active", sessions},
      {"servants_running", _choreographer.servants().size()},
      {"deploys", _counters.deploys.load()},
      {"sessions_opened", _counters.sessions_opened.load()},
      {"sessions_closed", _counters.sessions_closed.load()},
      {"grants", _counters.grants.load()},
      {"calls_routed", _counters.calls_routed.load()},
      {"publishes_routed", _counters.publishes_routed.load()},
      {"responses", _counters.responses.load()},
      {"errors", _counters.errors.load()},
      {"servants_started", _counters.servants_started.load()},
      {"servants_stopped", _counters.servants_stopped.load()},
    };
  }

  std::vector<TraceEvent> ServicePortal::trace() const
  {
    std::lock_guard lock(_mutex);
    return _trace;
  }

} // namespace cloudroid
