#include <cloudroid/errors.hpp>
#include <cloudroid/sandbox.hpp>
#include <cloudroid/stub.hpp>

#include <spdlog/spdlog.h>

#include <deque>
#include <future>
#include <map>
#include <mutex>

namespace cloudroid {

  using protocol::Envelope;
  using protocol::Op;

  std::string_view to_string(Winner w) { return w == Winner::remote ? "remote" : "local"; }

  namespace {

    using Effects = std::vector<std::function<void()>>;

    void run_all(Effects& fx)
    {
      for (auto& f : fx)
        f();
      fx.clear();
    }

  } // namespace

  struct Stub::Impl : std::enable_shared_from_this<Stub::Impl> {
    struct Pending {
      std::uint64_t seq = 0;
      std::string id;
      Envelope call;
      InvokeCallback done;
      double issued_ms = 0;

      bool remote_needed = true;
      bool remote_sent = false;
      bool remote_resolved = false;
      bool timed_out = false;
      std::optional<double> t_remote;
      TimerId timeout_timer = 0;

      bool local_raced = false;
      bool local_submitted = false;
      bool local_done = false;
      std::optional<double> t_local;

      bool delivered = false;
      bool failed = false;
      double delivered_ms = 0;
      Winner winner = Winner::remote;
      LocalAction action = LocalAction::none;
      double q_after = 0;
    };

    Impl(StubDescriptor d, StubConfig c, Scheduler& s, std::shared_ptr<RemoteChannel> ch)
      : desc(std::move(d)), config(c), sched(s), channel(std::move(ch))
    {
      auto t_desire = config.t_desire_ms ? config.t_desire_ms : desc.defaults.t_desire_ms;
      auto t_max = config.t_max_ms ? config.t_max_ms : desc.defaults.t_max_ms;
      if (!t_desire || !t_max)
        throw ValidationError("t_desire_ms", "stub for '" + desc.service + "' has no SLA times");
      sat = SatisfactionState::initial(config.q_threshold.value_or(desc.defaults.q_threshold), *t_desire, *t_max);
      if (config.local_cpu_millicores <= 0)
        throw ValidationError("local_cpu_millicores", "must be positive");
      if (config.keepalive_interval_ms <= 0 || config.keepalive_misses <= 0)
        throw ValidationError("keepalive", "interval and misses must be positive");
      if (desc.local_fallback)
        fallback = local_manifest(desc);
    }

    // ---- helpers, all called with `m` held ----

    double now() const { return sched.now_ms(); }

    void send_locked(const Envelope& e, Effects& fx)
    {
      fx.push_back([ch = channel, text = protocol::encode(e)]() mutable { ch->send(std::move(text)); });
    }

    void request_grant_locked(Effects& fx)
    {
      Envelope e;
      e.op = Op::request_service;
      e.id = "grant-" + std::to_string(++grant_seq);
      e.target = desc.service;
      e.sla = protocol::SlaDeclaration{protocol::SlaTimes{sat.t_desire_ms, sat.t_max_ms}, std::nullopt};
      grant_id = e.id;
      grant_outstanding = true;
      send_locked(e, fx);
    }

    bool racing_enabled() const { return sat.local_running && !desc.stateful && fallback.has_value(); }

    bool local_needed() const
    {
      return mode == StubMode::local_only || racing_enabled() ||
             std::any_of(pending.begin(), pending.end(), [](const auto& kv) {
               return kv.second.local_submitted && !kv.second.local_done;
             });
    }

    void ensure_local_locked()
    {
      if (local && !local->stopped())
        return;
      if (!fallback)
        throw LocalLaunchError("service '" + desc.service + "' has no local fallback");
      ServantRecord record;
      record.servant_id = "local-" + desc.service + "-" + std::to_string(++local_seq);
      record.service = desc.service;
      record.quota = ResourceQuota{config.local_cpu_millicores, 256};
      std::weak_ptr<Impl> weak = shared_from_this();
      try {
        local = start_sandbox(record, *fallback, sched, [weak](const Envelope& e) {
          if (auto self = weak.lock())
            self->on_local_publish(e);
        });
      } catch (const LocalLaunchError&) {
        throw;
      } catch (const std::exception& e) {
        throw LocalLaunchError("cannot launch local copy of '" + desc.service + "': " + e.what());
      }
    }

    void stop_local_if_idle_locked(Effects& fx)
    {
      if (!local || local_needed())
        return;
      fx.push_back([sb = std::move(local)] { sb->stop(); });
      local.reset();
    }

    void submit_local_locked(Pending& p, Effects& fx)
    {
      ensure_local_locked();
      p.local_submitted = true;
      std::weak_ptr<Impl> weak = shared_from_this();
      fx.push_back([sb = local, call = p.call, weak, id = p.id] {
        sb->submit(call, [weak, id](const Envelope& reply) {
          if (auto self = weak.lock())
            self->on_local_reply(id, reply);
        });
      });
    }

    void send_call_locked(Pending& p, Effects& fx)
    {
      p.remote_sent = true;
      send_locked(p.call, fx);
    }

    void deliver_locked(Pending& p, Winner winner, const Envelope& reply, Effects& fx)
    {
      if (reply.op == Op::error) {
        auto code = reply.status ? reply.status->code : std::string("error");
        auto detail = reply.status ? reply.status->detail : std::string();
        deliver_error_locked(p, std::make_exception_ptr(RemoteError(code, code + ": " + detail)), fx);
        return;
      }
      RequestOutcome out;
      out.request_id = p.id;
      out.remote_timed_out = p.timed_out;
      if (p.remote_resolved && !p.timed_out)
        out.t_remote_ms = p.t_remote;
      out.t_local_ms = p.t_local;
      out.winner = winner;
      out.local_raced = p.local_raced;
      out.reply = reply;
      try {
        if (reply.payload)
          out.result = protocol::decompress_payload(*reply.payload);
      } catch (const std::exception&) {
        deliver_error_locked(p, std::current_exception(), fx);
        return;
      }
      p.delivered = true;
      p.delivered_ms = now();
      p.winner = winner;
      Completion c;
      c.outcome = std::move(out);
      fx.push_back([done = p.done, c = std::move(c)]() mutable {
        if (done)
          done(std::move(c));
      });
    }

    void deliver_error_locked(Pending& p, std::exception_ptr error, Effects& fx)
    {
      p.delivered = true;
      p.failed = true;
      p.delivered_ms = now();
      Completion c;
      c.error = std::move(error);
      fx.push_back([done = p.done, c = std::move(c)]() mutable {
        if (done)
          done(std::move(c));
      });
    }

    void feed_locked(Pending& p, double t)
    {
      auto before = sat;
      auto update = update_satisfaction(sat, t);
      if (desc.stateful || !fallback) {
        // Only the failover path may run a local copy here; q is still tracked.
        update.state.local_running = before.local_running;
        update.action = LocalAction::none;
      }
      sat = update.state;
      p.action = update.action;
      p.q_after = sat.q;
    }

    void settle_locked(const std::string& id, Effects& fx)
    {
      auto it = pending.find(id);
      if (it == pending.end())
        return;
      auto& p = it->second;
      bool remote_done = !p.remote_needed || p.remote_resolved;
      bool local_finished = !p.local_submitted || p.local_done;
      if (!p.delivered || !remote_done || !local_finished)
        return;
      RequestRecord r;
      r.seq = p.seq;
      r.request_id = p.id;
      r.issued_ms = p.issued_ms;
      r.delivered_ms = p.delivered_ms;
      r.remote_sent = p.remote_sent;
      r.remote_timed_out = p.timed_out;
      r.t_remote_ms = p.timed_out ? std::nullopt : p.t_remote;
      r.t_local_ms = p.t_local;
      r.local_raced = p.local_raced;
      r.winner = p.winner;
      r.failed = p.failed;
      r.q_after = p.remote_resolved ? p.q_after : sat.q;
      r.action = p.action;
      pending.erase(it);
      if (settled)
        fx.push_back([l = settled, r] { l(r); });
    }

    void fail_awaiting_locked(const std::string& why, Effects& fx)
    {
      for (const auto& id : awaiting_grant) {
        auto it = pending.find(id);
        if (it == pending.end())
          continue;
        auto& p = it->second;
        sched.cancel(p.timeout_timer);
        p.remote_needed = false;
        if (!p.delivered && !(p.local_submitted && !p.local_done))
          deliver_error_locked(p, std::make_exception_ptr(ServiceDown(why)), fx);
        settle_locked(id, fx);
      }
      awaiting_grant.clear();
    }

    void apply_action_locked(LocalAction action, Effects& fx)
    {
      if (desc.stateful || !fallback)
        return;
      if (action == LocalAction::start_local) {
        try {
          ensure_local_locked();
          // requests still waiting on the remote join the race now
          for (auto& [id, p] : pending)
            if (!p.delivered && !p.local_submitted)
              submit_local_locked(p, fx);
        } catch (const LocalLaunchError& e) {
          spdlog::warn("{}", e.what());
          sat.local_running = false;
        }
      } else if (action == LocalAction::stop_local) {
        stop_local_if_idle_locked(fx);
      }
    }

    // ---- event handlers ----

    void on_frame(const std::string& raw)
    {
      Envelope e;
      try {
        e = protocol::decode(raw);
      } catch (const std::exception& ex) {
        spdlog::warn("stub {}: dropping bad frame: {}", desc.service, ex.what());
        return;
      }
      Effects fx;
      {
        std::lock_guard lock(m);
        if (stopped)
          return;
        switch (e.op) {
        case Op::pong:
          missed = 0;
          link_up_locked(fx);
          break;
        case Op::service_granted:
          if (e.id == grant_id)
            on_granted_locked(e, fx);
          break;
        case Op::error:
          if (e.id == grant_id && grant_outstanding) {
            grant_outstanding = false;
            spdlog::warn("stub {}: grant refused: {}", desc.service, e.status ? e.status->detail : "");
          } else {
            on_remote_reply_locked(e, fx);
          }
          break;
        case Op::response:
          on_remote_reply_locked(e, fx);
          break;
        case Op::publish:
          on_topic_locked(e, fx);
          break;
        default:
          break;
        }
      }
      run_all(fx);
    }

    void on_granted_locked(const Envelope& e, Effects& fx)
    {
      grant_outstanding = false;
      granted = true;
      servant = {};
      if (e.payload) {
        try {
          auto bytes = protocol::decompress_payload(*e.payload);
          servant.assign(bytes.begin(), bytes.end());
        } catch (const std::exception&) {
        }
      }
      if (mode == StubMode::regranting) {
        mode = StubMode::normal;
        stop_local_if_idle_locked(fx);
      }
      if (mode != StubMode::normal)
        return;
      for (const auto& id : awaiting_grant) {
        auto it = pending.find(id);
        if (it != pending.end() && !it->second.remote_resolved)
          send_call_locked(it->second, fx);
      }
      awaiting_grant.clear();
    }

    void on_remote_reply_locked(const Envelope& e, Effects& fx)
    {
      auto it = pending.find(e.id);
      if (it == pending.end() || it->second.remote_resolved || !it->second.remote_sent) {
        ++discarded;
        return;
      }
      auto& p = it->second;
      sched.cancel(p.timeout_timer);
      p.remote_resolved = true;
      p.t_remote = now() - p.issued_ms;
      bool ok = e.op == Op::response;
      // An error is no service at all; charge it like a timeout.
      feed_locked(p, ok ? *p.t_remote : sat.timeout_marker_ms());
      if (!ok && e.status && e.status->code == protocol::codes::no_grant)
        granted = false;
      if (!p.delivered) {
        if (ok || !(p.local_submitted && !p.local_done))
          deliver_locked(p, Winner::remote, e, fx);
      }
      auto action = p.action;
      auto id = p.id;
      apply_action_locked(action, fx);
      settle_locked(id, fx);
    }

    void on_timeout(const std::string& id)
    {
      Effects fx;
      {
        std::lock_guard lock(m);
        auto it = pending.find(id);
        if (stopped || it == pending.end() || it->second.remote_resolved)
          return;
        auto& p = it->second;
        p.remote_resolved = true;
        p.timed_out = true;
        std::erase(awaiting_grant, id);
        feed_locked(p, sat.timeout_marker_ms());
        if (!p.delivered && !(p.local_submitted && !p.local_done)) {
          if (fallback && mode != StubMode::down) {
            try {
              submit_local_locked(p, fx);
            } catch (const std::exception&) {
              deliver_error_locked(p, std::current_exception(), fx);
            }
          } else {
            deliver_error_locked(
              p, std::make_exception_ptr(ServiceDown("no reply from '" + desc.service + "' within 2*t_max")), fx);
          }
        }
        apply_action_locked(p.action, fx);
        settle_locked(id, fx);
      }
      run_all(fx);
    }

    void on_local_reply(const std::string& id, const Envelope& e)
    {
      Effects fx;
      {
        std::lock_guard lock(m);
        auto it = pending.find(id);
        if (it == pending.end() || it->second.local_done)
          return;
        auto& p = it->second;
        p.local_done = true;
        p.t_local = now() - p.issued_ms;
        if (!p.delivered) {
          bool remote_open = p.remote_needed && !p.remote_resolved;
          if (e.op != Op::error || !remote_open)
            deliver_locked(p, Winner::local, e, fx);
        }
        settle_locked(id, fx);
        if (!stopped)
          stop_local_if_idle_locked(fx);
      }
      run_all(fx);
    }

    void on_local_publish(const Envelope& e)
    {
      Effects fx;
      {
        std::lock_guard lock(m);
        on_topic_locked(e, fx);
      }
      run_all(fx);
    }

    void on_topic_locked(const Envelope& e, Effects& fx)
    {
      auto it = subscribers.find(e.target);
      if (it == subscribers.end() || !e.payload)
        return;
      Bytes bytes;
      try {
        bytes = protocol::decompress_payload(*e.payload);
      } catch (const std::exception& ex) {
        spdlog::warn("stub {}: bad publish on {}: {}", desc.service, e.target, ex.what());
        return;
      }
      for (const auto& h : it->second)
        fx.push_back([h, bytes] { h(bytes); });
    }

    void on_keepalive()
    {
      Effects fx;
      {
        std::lock_guard lock(m);
        if (stopped)
          return;
        if (missed >= config.keepalive_misses)
          link_down_locked(fx);
        if (mode == StubMode::local_only || mode == StubMode::down) {
          if (!channel->connected()) {
            std::weak_ptr<Impl> weak = shared_from_this();
            fx.push_back([weak, ch = channel] {
              if (!ch->reconnect())
                return;
              if (auto self = weak.lock()) {
                std::lock_guard relock(self->m);
                self->granted = false;
                self->grant_outstanding = false;
              }
            });
          }
        } else if (!granted && !grant_outstanding) {
          request_grant_locked(fx);
        }
        ping_locked(fx);
        schedule_keepalive_locked();
      }
      run_all(fx);
    }

    void ping_locked(Effects& fx)
    {
      Envelope ping;
      ping.op = Op::ping;
      ping.id = "ka-" + std::to_string(++ping_seq);
      ++missed;
      send_locked(ping, fx);
    }

    void schedule_keepalive_locked()
    {
      std::weak_ptr<Impl> weak = shared_from_this();
      keepalive_timer = sched.after(config.keepalive_interval_ms, [weak] {
        if (auto self = weak.lock())
          self->on_keepalive();
      });
    }

    FailoverContext failover_context() const { return {mode, fallback.has_value(), desc.stateful}; }

    void link_down_locked(Effects& fx)
    {
      auto action = failover_tick(failover_context(), LinkStatus::down);
      if (action == FailoverAction::none)
        return;
      spdlog::info("stub {}: link down, {}", desc.service, to_string(action));
      granted = false;
      grant_outstanding = false;
      if (action == FailoverAction::enter_local_only) {
        mode = StubMode::local_only;
        try {
          ensure_local_locked();
        } catch (const std::exception& e) {
          spdlog::warn("{}", e.what());
          mode = StubMode::down;
        }
      } else {
        mode = StubMode::down;
      }
      if (mode == StubMode::local_only) {
        // Calls never sent for lack of a grant move to the local copy.
        for (const auto& id : awaiting_grant) {
          auto it = pending.find(id);
          if (it == pending.end())
            continue;
          auto& p = it->second;
          sched.cancel(p.timeout_timer);
          p.remote_needed = false;
          if (!p.local_submitted)
            submit_local_locked(p, fx);
        }
        awaiting_grant.clear();
      } else {
        fail_awaiting_locked("link to portal is down", fx);
      }
    }

    void link_up_locked(Effects& fx)
    {
      auto action = failover_tick(failover_context(), LinkStatus::up);
      if (action == FailoverAction::none)
        return;
      spdlog::info("stub {}: link restored, {}", desc.service, to_string(action));
      if (action == FailoverAction::rerequest_service) {
        mode = StubMode::regranting;
        granted = false;
        request_grant_locked(fx);
        return;
      }
      mode = StubMode::normal;
      if (!granted)
        request_grant_locked(fx);
      stop_local_if_idle_locked(fx);
    }

    StubDescriptor desc;
    StubConfig config;
    Scheduler& sched;
    std::shared_ptr<RemoteChannel> channel;
    std::optional<PackageManifest> fallback;

    mutable std::mutex m;
    SatisfactionState sat;
    StubMode mode = StubMode::normal;
    bool started = false;
    bool stopped = false;
    bool granted = false;
    bool grant_outstanding = false;
    std::string grant_id;
    std::string servant;
    std::uint64_t grant_seq = 0;
    std::uint64_t ping_seq = 0;
    std::uint64_t request_seq = 0;
    std::uint64_t local_seq = 0;
    int missed = 0;
    TimerId keepalive_timer = 0;
    std::map<std::string, Pending> pending;
    std::deque<std::string> awaiting_grant;
    std::shared_ptr<Sandbox> local;
    std::map<std::string, std::vector<TopicHandler>> subscribers;
    SettledListener settled;
    std::uint64_t discarded = 0;
  };

  Stub::Stub(StubDescriptor descriptor, StubConfig config, Scheduler& scheduler, std::shared_ptr<RemoteChannel> channel)
    : _impl(std::make_shared<Impl>(std::move(descriptor), config, scheduler, std::move(channel)))
  {
  }

  Stub::~Stub() { shutdown(); }

  void Stub::start()
  {
    Effects fx;
    {
      std::lock_guard lock(_impl->m);
      if (_impl->started || _impl->stopped)
        return;
      _impl->started = true;
      std::weak_ptr<Impl> weak = _impl;
      _impl->channel->set_receiver([weak](std::string raw) {
        if (auto self = weak.lock())
          self->on_frame(raw);
      });
      _impl->request_grant_locked(fx);
      _impl->ping_locked(fx);
      _impl->schedule_keepalive_locked();
    }
    run_all(fx);
  }

  void Stub::shutdown()
  {
    Effects fx;
    {
      auto& impl = *_impl;
      std::lock_guard lock(impl.m);
      if (impl.stopped)
        return;
      impl.stopped = true;
      impl.sched.cancel(impl.keepalive_timer);
      for (auto& [id, p] : impl.pending) {
        impl.sched.cancel(p.timeout_timer);
        if (!p.delivered)
          impl.deliver_error_locked(p, std::make_exception_ptr(ServiceDown("stub shut down")), fx);
      }
      impl.pending.clear();
      impl.awaiting_grant.clear();
      if (impl.local)
        fx.push_back([sb = std::move(impl.local)] { sb->stop(); });
      impl.local.reset();
      impl.channel->set_receiver({});
    }
    run_all(fx);
  }

  std::string Stub::call_async(const std::string& target, const Bytes& payload, InvokeCallback done)
  {
    auto& impl = *_impl;
    const auto* rpc = impl.desc.interface.find_rpc(target);
    if (!rpc)
      throw UnknownTarget("service '" + impl.desc.service + "' has no rpc '" + target + "'");
    validate_encoding(rpc->request_schema, payload);

    Effects fx;
    std::string id;
    {
      std::lock_guard lock(impl.m);
      id = "r" + std::to_string(impl.request_seq);
      auto& p = impl.pending[id];
      p.seq = impl.request_seq++;
      p.id = id;
      p.done = std::move(done);
      p.issued_ms = impl.now();
      p.q_after = impl.sat.q;
      p.call.op = Op::call;
      p.call.id = id;
      p.call.target = target;
      p.call.payload =
        protocol::compress_payload(rpc->request_schema, payload, impl.desc.codec_for(rpc->request_schema));

      if (impl.stopped || impl.mode == StubMode::down) {
        p.remote_needed = false;
        impl.deliver_error_locked(
          p, std::make_exception_ptr(ServiceDown("service '" + impl.desc.service + "' is unreachable")), fx);
      } else if (impl.mode == StubMode::local_only) {
        p.remote_needed = false;
        try {
          impl.submit_local_locked(p, fx);
        } catch (const std::exception&) {
          impl.deliver_error_locked(p, std::current_exception(), fx);
        }
      } else {
        std::weak_ptr<Impl> weak = _impl;
        p.timeout_timer = impl.sched.after(impl.sat.timeout_marker_ms(), [weak, id] {
          if (auto self = weak.lock())
            self->on_timeout(id);
        });
        if (impl.mode == StubMode::normal && impl.granted)
          impl.send_call_locked(p, fx);
        else
          impl.awaiting_grant.push_back(id);
        if (impl.mode == StubMode::normal && impl.racing_enabled()) {
          p.local_raced = true;
          try {
            impl.submit_local_locked(p, fx);
          } catch (const std::exception& e) {
            spdlog::warn("{}", e.what());
          }
        }
      }
      impl.settle_locked(id, fx);
    }
    run_all(fx);
    return id;
  }

  RequestOutcome Stub::call(const std::string& target, const Bytes& payload)
  {
    std::promise<RequestOutcome> promise;
    auto future = promise.get_future();
    call_async(target, payload, [&promise](Completion c) {
      if (c.error)
        promise.set_exception(c.error);
      else
        promise.set_value(std::move(*c.outcome));
    });
    return future.get();
  }

  void Stub::publish(const std::string& topic, const Bytes& payload)
  {
    auto& impl = *_impl;
    const auto* spec = impl.desc.interface.find_topic(topic);
    if (!spec || spec->direction != Direction::inbound)
      throw UnknownTarget("service '" + impl.desc.service + "' has no inbound topic '" + topic + "'");
    validate_encoding(spec->schema, payload);
    Envelope e;
    e.op = Op::publish;
    e.target = topic;
    e.payload = protocol::compress_payload(spec->schema, payload, impl.desc.codec_for(spec->schema));

    Effects fx;
    {
      std::lock_guard lock(impl.m);
      if (impl.stopped)
        throw ServiceDown("stub is shut down");
      if (impl.mode == StubMode::local_only) {
        impl.ensure_local_locked();
        fx.push_back([sb = impl.local, e] { sb->submit(e, {}); });
      } else if (impl.mode == StubMode::normal && impl.granted) {
        impl.send_locked(e, fx);
      } else {
        throw ServiceDown("service '" + impl.desc.service + "' is not reachable for publishing");
      }
    }
    run_all(fx);
  }

  void Stub::subscribe(const std::string& topic, TopicHandler handler)
  {
    auto& impl = *_impl;
    const auto* spec = impl.desc.interface.find_topic(topic);
    if (!spec || spec->direction != Direction::outbound)
      throw UnknownTarget("service '" + impl.desc.service + "' has no outbound topic '" + topic + "'");
    std::lock_guard lock(impl.m);
    impl.subscribers[topic].push_back(std::move(handler));
  }

  void Stub::on_settled(SettledListener listener)
  {
    std::lock_guard lock(_impl->m);
    _impl->settled = std::move(listener);
  }

  const StubDescriptor& Stub::descriptor() const { return _impl->desc; }

  SatisfactionState Stub::satisfaction() const
  {
    std::lock_guard lock(_impl->m);
    return _impl->sat;
  }

  StubMode Stub::mode() const
  {
    std::lock_guard lock(_impl->m);
    return _impl->mode;
  }

  bool Stub::granted() const
  {
    std::lock_guard lock(_impl->m);
    return _impl->granted;
  }

  std::string Stub::servant_id() const
  {
    std::lock_guard lock(_impl->m);
    return _impl->servant;
  }

  std::uint64_t Stub::late_replies_discarded() const
  {
    std::lock_guard lock(_impl->m);
    return _impl->discarded;
  }

  bool Stub::local_copy_running() const
  {
    std::lock_guard lock(_impl->m);
    return _impl->local && !_impl->local->stopped();
  }

} // namespace cloudroid
