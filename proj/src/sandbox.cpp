#include <cloudroid/errors.hpp>
#include <cloudroid/sandbox.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <future>

namespace cloudroid {

  using protocol::Envelope;
  using protocol::Op;

  namespace {

    void answer_terminating(const Envelope& in, const EnvelopeSink& reply, std::string_view detail)
    {
      if (in.op == Op::call && reply)
        reply(protocol::make_error(in.id, in.target, protocol::codes::terminating, std::string(detail)));
    }

    void ignore_sigpipe()
    {
      static std::once_flag once;
      std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
    }

  } // namespace

  Envelope Sandbox::execute(const Envelope& call)
  {
    if (call.op != Op::call)
      throw Error("execute() expects a call envelope");
    auto promise = std::make_shared<std::promise<Envelope>>();
    auto future = promise->get_future();
    submit(call, [promise](const Envelope& reply) { promise->set_value(reply); });
    return future.get();
  }

  std::vector<std::string> split_command(std::string_view command)
  {
    std::vector<std::string> out;
    std::string word;
    bool quoted = false;
    bool in_word = false;
    for (char c : command) {
      if (c == '"') {
        quoted = !quoted;
        in_word = true;
      } else if (!quoted && std::isspace(static_cast<unsigned char>(c))) {
        if (in_word)
          out.push_back(std::move(word));
        word.clear();
        in_word = false;
      } else {
        word += c;
        in_word = true;
      }
    }
    if (in_word)
      out.push_back(std::move(word));
    return out;
  }

  // ---- BuiltinSandbox ----

  BuiltinSandbox::BuiltinSandbox(std::string servant_id, PackageManifest manifest, ResourceQuota quota,
                                 Scheduler& scheduler, EnvelopeSink outbound)
      : _servant_id(std::move(servant_id)), _scheduler(scheduler), _outbound(std::move(outbound))
  {
    if (!manifest.workload.is_builtin())
      throw WorkloadLaunchError("BuiltinSandbox needs a builtin workload");
    _engine.emplace(std::move(manifest), quota);
  }

  void BuiltinSandbox::submit(Envelope in, EnvelopeSink reply)
  {
    std::vector<std::function<void()>> deferred;
    {
      std::lock_guard lock(_mutex);
      if (!_stopped) {
        _queue.push_back(Job{std::move(in), std::move(reply)});
        if (!_current)
          start_next_locked(deferred);
        in = {};
        reply = nullptr;
      }
    }
    if (reply)
      answer_terminating(in, reply, "servant is stopped");
    for (auto& d : deferred)
      d();
  }

  void BuiltinSandbox::start_next_locked(std::vector<std::function<void()>>&)
  {
    if (_current || _queue.empty())
      return;
    _current = std::move(_queue.front());
    _queue.pop_front();
    auto outcome = _engine->process(_current->in);
    _current_result = Delivery{std::move(outcome.replies), _current->reply};
    auto generation = ++_generation;
    _timer = _scheduler.after(outcome.service_ms, [weak = weak_from_this(), generation] {
      if (auto self = weak.lock())
        self->finish(generation);
    });
  }

  void BuiltinSandbox::finish(std::uint64_t generation)
  {
    std::optional<Delivery> delivery;
    std::vector<std::function<void()>> deferred;
    {
      std::lock_guard lock(_mutex);
      if (_stopped || generation != _generation || !_current)
        return;
      delivery = std::move(_current_result);
      _current_result.reset();
      _current.reset();
      start_next_locked(deferred);
    }
    for (const auto& env : delivery->replies) {
      if (env.op == Op::publish) {
        if (_outbound)
          _outbound(env);
      } else if (delivery->reply) {
        delivery->reply(env);
      }
    }
  }

  void BuiltinSandbox::stop()
  {
    std::vector<Job> abandoned;
    {
      std::lock_guard lock(_mutex);
      if (_stopped)
        return;
      _stopped = true;
      _scheduler.cancel(_timer);
      if (_current)
        abandoned.push_back(std::move(*_current));
      _current.reset();
      _current_result.reset();
      for (auto& job : _queue)
        abandoned.push_back(std::move(job));
      _queue.clear();
      _engine.reset();
    }
    for (const auto& job : abandoned)
      answer_terminating(job.in, job.reply, "servant terminating");
  }

  bool BuiltinSandbox::stopped() const
  {
    std::lock_guard lock(_mutex);
    return _stopped;
  }

  std::size_t BuiltinSandbox::in_flight() const
  {
    std::lock_guard lock(_mutex);
    return _queue.size() + (_current ? 1 : 0);
  }

  std::uint64_t BuiltinSandbox::frames_stored() const
  {
    std::lock_guard lock(_mutex);
    return _engine ? _engine->frames_stored() : 0;
  }

  // ---- ExternalProcessSandbox ----

  ExternalProcessSandbox::ExternalProcessSandbox(std::string servant_id, const PackageManifest& manifest,
                                                 ResourceQuota quota, EnvelopeSink outbound, int handshake_timeout_ms)
      : _servant_id(std::move(servant_id)), _outbound(std::move(outbound))
  {
    ignore_sigpipe();
    const auto& params = manifest.workload.params;
    auto it = params.find("command");
    const auto* command = it == params.end() ? nullptr : std::get_if<std::string>(&it->second);
    auto argv_strings = command ? split_command(*command) : std::vector<std::string>{};
    if (argv_strings.empty())
      throw WorkloadLaunchError("external_process workload has no command");

    int in_pipe[2];
    int out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0)
      throw WorkloadLaunchError(fmt::format("pipe: {}", std::strerror(errno)));
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw WorkloadLaunchError(fmt::format("pipe: {}", std::strerror(errno)));
    }

    std::vector<char*> argv;
    for (auto& s : argv_strings)
      argv.push_back(s.data());
    argv.push_back(nullptr);
    // environment is prepared before fork; the child only calls async-signal-safe functions
    std::vector<std::string> env_strings{
      "CLOUDROID_SERVANT_ID=" + _servant_id,
      "CLOUDROID_CPU_MILLICORES=" + std::to_string(quota.cpu_millicores),
      "CLOUDROID_MEMORY_MB=" + std::to_string(quota.memory_mb),
    };
    for (char** e = environ; e && *e; ++e)
      if (!std::string_view(*e).starts_with("CLOUDROID_"))
        env_strings.emplace_back(*e);
    std::vector<char*> envp;
    for (auto& s : env_strings)
      envp.push_back(s.data());
    envp.push_back(nullptr);

    _pid = ::fork();
    if (_pid < 0)
      throw WorkloadLaunchError(fmt::format("fork: {}", std::strerror(errno)));
    if (_pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::execvpe(argv[0], argv.data(), envp.data());
      ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    _to_child = in_pipe[1];
    _from_child = out_pipe[0];

    // handshake: ping out, a pong line back within the deadline
    auto fail = [&](const std::string& why) {
      ::kill(_pid, SIGKILL);
      reap();
      ::close(_to_child);
      ::close(_from_child);
      throw WorkloadLaunchError(fmt::format("'{}': {}", argv_strings.front(), why));
    };
    try {
      Envelope ping;
      ping.op = Op::ping;
      write_line(protocol::encode(ping));
    } catch (const Error& e) {
      fail(e.what());
    }

    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(handshake_timeout_ms);
    bool ponged = false;
    while (!ponged) {
      auto nl = _buffer.find('\n');
      if (nl != std::string::npos) {
        auto line = _buffer.substr(0, nl);
        _buffer.erase(0, nl + 1);
        try {
          ponged = protocol::decode(line).op == Op::pong;
        } catch (const ProtocolError&) {
        }
        continue;
      }
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0)
        fail("no pong within handshake timeout");
      pollfd pfd{_from_child, POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0 && errno == EINTR)
        continue;
      if (rc <= 0)
        continue;
      char buf[4096];
      auto n = ::read(_from_child, buf, sizeof buf);
      if (n <= 0)
        fail("process exited before handshake");
      _buffer.append(buf, static_cast<std::size_t>(n));
    }

    _reader = std::thread([this] { read_loop(); });
  }

  ExternalProcessSandbox::~ExternalProcessSandbox() { stop(); }

  void ExternalProcessSandbox::write_line(const std::string& line)
  {
    std::lock_guard lock(_write_mutex);
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      auto n = ::write(_to_child, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR)
          continue;
        throw WorkloadLaunchError(fmt::format("write to servant process: {}", std::strerror(errno)));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  void ExternalProcessSandbox::read_loop()
  {
    char buf[65536];
    for (;;) {
      std::size_t nl;
      while ((nl = _buffer.find('\n')) != std::string::npos) {
        auto line = _buffer.substr(0, nl);
        _buffer.erase(0, nl + 1);
        Envelope env;
        try {
          env = protocol::decode(line);
        } catch (const ProtocolError& e) {
          spdlog::warn("servant {}: dropping bad line: {}", _servant_id, e.what());
          continue;
        }
        if (env.op == Op::publish) {
          if (_outbound)
            _outbound(env);
        } else if (env.op == Op::response || env.op == Op::error) {
          EnvelopeSink sink;
          {
            std::lock_guard lock(_mutex);
            auto it = _pending.find(env.id);
            if (it != _pending.end()) {
              sink = std::move(it->second);
              _pending.erase(it);
            }
          }
          if (sink)
            sink(env);
        }
      }
      auto n = ::read(_from_child, buf, sizeof buf);
      if (n < 0 && errno == EINTR)
        continue;
      if (n <= 0)
        break;
      _buffer.append(buf, static_cast<std::size_t>(n));
    }
    fail_pending("servant process exited");
  }

  void ExternalProcessSandbox::fail_pending(std::string_view detail)
  {
    std::map<std::string, EnvelopeSink> pending;
    {
      std::lock_guard lock(_mutex);
      pending.swap(_pending);
    }
    for (auto& [id, sink] : pending)
      sink(protocol::make_error(id, "", protocol::codes::terminating, std::string(detail)));
  }

  void ExternalProcessSandbox::submit(Envelope in, EnvelopeSink reply)
  {
    {
      std::lock_guard lock(_mutex);
      if (_stopped) {
        answer_terminating(in, reply, "servant is stopped");
        return;
      }
      if (in.op == Op::call) {
        if (_pending.contains(in.id)) {
          reply(protocol::make_error(in.id, in.target, protocol::codes::duplicate_id, "call id already in flight"));
          return;
        }
        _pending.emplace(in.id, reply);
      }
    }
    try {
      write_line(protocol::encode(in));
    } catch (const Error& e) {
      EnvelopeSink sink;
      {
        std::lock_guard lock(_mutex);
        auto it = _pending.find(in.id);
        if (it != _pending.end()) {
          sink = std::move(it->second);
          _pending.erase(it);
        }
      }
      if (sink)
        sink(protocol::make_error(in.id, in.target, protocol::codes::terminating, e.what()));
    }
  }

  void ExternalProcessSandbox::reap()
  {
    if (_reaped || _pid <= 0)
      return;
    for (int i = 0; i < 100; ++i) {
      int status = 0;
      auto rc = ::waitpid(_pid, &status, WNOHANG);
      if (rc == _pid || (rc < 0 && errno == ECHILD)) {
        _reaped = true;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(_pid, SIGKILL);
    ::waitpid(_pid, nullptr, 0);
    _reaped = true;
  }

  void ExternalProcessSandbox::stop()
  {
    {
      std::lock_guard lock(_mutex);
      if (_stopped)
        return;
      _stopped = true;
    }
    // EOF on stdin lets the child drain in-flight work and exit
    {
      std::lock_guard lock(_write_mutex);
      ::close(_to_child);
    }
    reap();
    if (_reader.joinable())
      _reader.join();
    ::close(_from_child);
    fail_pending("servant terminating");
  }

  bool ExternalProcessSandbox::stopped() const
  {
    std::lock_guard lock(_mutex);
    return _stopped;
  }

  std::size_t ExternalProcessSandbox::in_flight() const
  {
    std::lock_guard lock(_mutex);
    return _pending.size();
  }

  std::shared_ptr<Sandbox> start_sandbox(const ServantRecord& record, const PackageManifest& manifest,
                                         Scheduler& scheduler, EnvelopeSink outbound)
  {
    if (manifest.workload.is_builtin())
      return std::make_shared<BuiltinSandbox>(record.servant_id, manifest, record.quota, scheduler,
                                              std::move(outbound));
    return std::make_shared<ExternalProcessSandbox>(record.servant_id, manifest, record.quota, std::move(outbound));
  }

} // namespace cloudroid
