#include <cloudroid/errors.hpp>
#include <cloudroid/harness.hpp>
#include <cloudroid/transport.hpp>
#include <cloudroid/workload.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace cloudroid::harness {

  using nlohmann::json;
  namespace fs = std::filesystem;

  // ---- scenario ----

  void Scenario::validate() const
  {
    if (request_count <= 0)
      throw ScenarioError("request_count must be positive");
    if (network_timeline.empty())
      throw ScenarioError("network_timeline is empty");
    std::int64_t next = 0;
    for (std::size_t i = 0; i < network_timeline.size(); ++i) {
      const auto& s = network_timeline[i];
      if (s.from_request != next)
        throw ScenarioError(fmt::format("network_timeline[{}] starts at {}, expected {}", i, s.from_request, next));
      if (s.to_request < s.from_request)
        throw ScenarioError(fmt::format("network_timeline[{}] ends before it starts", i));
      if (s.base_latency_ms < 0 || s.jitter_ms < 0 || s.bandwidth_kbps < 0)
        throw ScenarioError(fmt::format("network_timeline[{}] has a negative parameter", i));
      next = s.to_request + 1;
    }
    if (next != request_count)
      throw ScenarioError(fmt::format("network_timeline covers requests up to {}, expected {}", next - 1,
                                      request_count - 1));
    if (workload_timeline.empty())
      throw ScenarioError("workload_timeline is empty");
    std::set<std::string> names;
    for (const auto& c : workload_timeline) {
      if (c.name.empty() || !names.insert(c.name).second)
        throw ScenarioError("client names must be non-empty and unique");
      sla_for(c.service);
      if (c.period_ms < 0)
        throw ScenarioError("client '" + c.name + "' has a negative period");
    }
    for (const auto& s : services)
      if (s.t_desire_ms <= 0 || s.t_max_ms < s.t_desire_ms)
        throw ScenarioError("service '" + s.service + "' needs 0 < t_desire_ms <= t_max_ms");
    if (local_cpu_millicores <= 0 || keepalive_interval_ms <= 0 || keepalive_misses <= 0)
      throw ScenarioError("local_cpu_millicores and keepalive settings must be positive");
  }

  const ServiceSla& Scenario::sla_for(const std::string& service) const
  {
    for (const auto& s : services)
      if (s.service == service)
        return s;
    throw ScenarioError("no SLA declared for service '" + service + "'");
  }

  const NetworkSegment& Scenario::segment_for(std::int64_t index) const
  {
    index = std::clamp<std::int64_t>(index, 0, request_count - 1);
    for (const auto& s : network_timeline)
      if (index >= s.from_request && index <= s.to_request)
        return s;
    throw ScenarioError(fmt::format("no network segment covers request {}", index));
  }

  namespace {

    std::string read_file(const fs::path& path)
    {
      std::ifstream in(path, std::ios::binary);
      if (!in)
        throw IoError("cannot read " + path.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    }

    void write_file(const fs::path& path, const std::string& text)
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out || !(out << text) || !out.flush())
        throw IoError("cannot write " + path.string());
    }

    json inline_or_file(const json& value, const fs::path& base)
    {
      if (value.is_string())
        return manifest_json::parse_text(read_file(base / value.get<std::string>()));
      return value;
    }

    template <class T>
    T get_or(const json& j, const char* key, T fallback)
    {
      if (!j.contains(key))
        return fallback;
      try {
        return j.at(key).get<T>();
      } catch (const json::exception&) {
        throw ScenarioError(std::string("bad value for '") + key + "'");
      }
    }

    template <class T>
    T require(const json& j, const char* key)
    {
      if (!j.contains(key))
        throw ScenarioError(std::string("missing key '") + key + "'");
      return get_or<T>(j, key, T{});
    }

  } // namespace

  Scenario parse_scenario(std::string_view text, const fs::path& base_dir)
  {
    auto j = manifest_json::parse_text(text);
    if (!j.is_object())
      throw ScenarioError("scenario must be a JSON object");
    Scenario sc;
    sc.seed = require<std::uint64_t>(j, "seed");
    sc.request_count = require<std::int64_t>(j, "request_count");
    sc.local_cpu_millicores = get_or<std::int64_t>(j, "local_cpu_millicores", 1000);
    if (j.contains("keepalive")) {
      sc.keepalive_interval_ms = get_or<double>(j["keepalive"], "interval_ms", 2000);
      sc.keepalive_misses = get_or<int>(j["keepalive"], "misses", 3);
    }
    for (const auto& p : j.value("packages", json::array()))
      sc.packages.push_back(inline_or_file(p, base_dir).dump());
    if (j.contains("dictionary"))
      sc.dictionary = inline_or_file(j["dictionary"], base_dir);
    if (j.contains("nodes"))
      sc.nodes = inline_or_file(j["nodes"], base_dir);
    for (const auto& s : j.value("services", json::array())) {
      ServiceSla sla;
      sla.service = require<std::string>(s, "service");
      sla.t_desire_ms = require<std::int64_t>(s, "t_desire_ms");
      sla.t_max_ms = require<std::int64_t>(s, "t_max_ms");
      if (s.contains("q_threshold"))
        sla.q_threshold = get_or<std::int64_t>(s, "q_threshold", 10);
      sc.services.push_back(sla);
    }
    for (const auto& n : require<json>(j, "network_timeline")) {
      NetworkSegment seg;
      seg.from_request = require<std::int64_t>(n, "from_request");
      seg.to_request = require<std::int64_t>(n, "to_request");
      seg.base_latency_ms = get_or<double>(n, "base_latency_ms", 0);
      seg.jitter_ms = get_or<double>(n, "jitter_ms", 0);
      seg.bandwidth_kbps = get_or<double>(n, "bandwidth_kbps", 0);
      seg.up = get_or<bool>(n, "up", true);
      sc.network_timeline.push_back(seg);
    }
    for (const auto& w : require<json>(j, "workload_timeline")) {
      ClientSpec c;
      c.name = get_or<std::string>(w, "client", "client");
      c.service = require<std::string>(w, "service");
      c.target = require<std::string>(w, "target");
      c.payload_bytes = get_or<std::size_t>(w, "payload_bytes", 0);
      c.period_ms = get_or<double>(w, "period_ms", 0);
      auto mode = get_or<std::string>(w, "mode", "stub");
      if (mode == "stub")
        c.mode = ClientMode::stub;
      else if (mode == "native")
        c.mode = ClientMode::native;
      else
        throw ScenarioError("unknown client mode '" + mode + "'");
      sc.workload_timeline.push_back(c);
    }
    sc.validate();
    return sc;
  }

  Scenario load_scenario(const fs::path& file) { return parse_scenario(read_file(file), file.parent_path()); }

  // ---- network model and statistics ----

  std::optional<double> inject_network(const NetworkSegment& segment, std::size_t payload_bytes, std::mt19937_64& rng)
  {
    if (!segment.up)
      return std::nullopt;
    double delay = segment.base_latency_ms;
    if (segment.jitter_ms > 0)
      delay += std::uniform_real_distribution<double>(-segment.jitter_ms, segment.jitter_ms)(rng);
    if (segment.bandwidth_kbps > 0)
      delay += static_cast<double>(payload_bytes) * 8.0 / segment.bandwidth_kbps;
    return std::max(0.0, delay);
  }

  double compute_sd(const std::vector<double>& times)
  {
    if (times.empty())
      throw EmptyInput("standard deviation of an empty series");
    auto n = static_cast<double>(times.size());
    double mean = std::accumulate(times.begin(), times.end(), 0.0) / n;
    double sq = 0;
    for (double t : times)
      sq += (t - mean) * (t - mean);
    return std::sqrt(sq / n);
  }

  double percentile(std::vector<double> times, double p)
  {
    if (times.empty())
      throw EmptyInput("percentile of an empty series");
    std::sort(times.begin(), times.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(times.size())));
    rank = std::clamp<std::size_t>(rank, 1, times.size());
    return times[rank - 1];
  }

  Aggregates aggregate(const std::vector<RequestRow>& rows, std::int64_t t_max_ms)
  {
    Aggregates a;
    std::vector<double> served;
    std::size_t within = 0;
    for (const auto& r : rows) {
      if (r.winner == "error") {
        ++a.failures;
        continue;
      }
      served.push_back(r.serving_ms);
      if (r.serving_ms <= static_cast<double>(t_max_ms))
        ++within;
    }
    a.count = rows.size();
    if (!served.empty()) {
      a.mean_ms = std::accumulate(served.begin(), served.end(), 0.0) / static_cast<double>(served.size());
      a.sd_ms = compute_sd(served);
      a.p50 = percentile(served, 50);
      a.p95 = percentile(served, 95);
      a.p99 = percentile(served, 99);
    }
    a.fraction_within_t_max = rows.empty() ? 0 : static_cast<double>(within) / static_cast<double>(rows.size());
    return a;
  }

  // ---- report output ----

  const ClientReport& MetricsReport::client(const std::string& name) const
  {
    for (const auto& c : clients)
      if (c.name == name)
        return c;
    throw ScenarioError("no client '" + name + "' in report");
  }

  std::string csv_header() { return "index,t_remote_ms,t_local_ms,winner,q_after,action\n"; }

  std::string to_csv(const ClientReport& client)
  {
    std::string out = csv_header();
    for (const auto& r : client.rows) {
      std::string remote = r.remote_timeout ? "timeout" : r.t_remote_ms ? fmt::format("{:.3f}", *r.t_remote_ms) : "";
      std::string local = r.t_local_ms ? fmt::format("{:.3f}", *r.t_local_ms) : "";
      out += fmt::format("{},{},{},{},{},{}\n", r.index, remote, local, r.winner, r.q_after, to_string(r.action));
    }
    return out;
  }

  json to_json(const Aggregates& a)
  {
    return {{"mean_ms", a.mean_ms}, {"sd_ms", a.sd_ms}, {"p50", a.p50}, {"p95", a.p95}, {"p99", a.p99},
            {"fraction_within_t_max", a.fraction_within_t_max}, {"count", a.count}, {"failures", a.failures}};
  }

  Aggregates aggregates_from_json(const json& j)
  {
    try {
      Aggregates a;
      a.mean_ms = j.at("mean_ms").get<double>();
      a.sd_ms = j.at("sd_ms").get<double>();
      a.p50 = j.at("p50").get<double>();
      a.p95 = j.at("p95").get<double>();
      a.p99 = j.at("p99").get<double>();
      a.fraction_within_t_max = j.at("fraction_within_t_max").get<double>();
      a.count = j.at("count").get<std::size_t>();
      a.failures = j.at("failures").get<std::size_t>();
      return a;
    } catch (const json::exception& e) {
      throw ScenarioError(std::string("bad aggregates document: ") + e.what());
    }
  }

  void emit_report(const MetricsReport& report, const fs::path& dir)
  {
    auto write_client = [](const ClientReport& c, const fs::path& at) {
      std::error_code ec;
      fs::create_directories(at, ec);
      if (ec)
        throw IoError("cannot create " + at.string() + ": " + ec.message());
      write_file(at / "trace.csv", to_csv(c));
      auto agg = to_json(c.aggregates);
      agg["client"] = c.name;
      agg["mode"] = c.mode == ClientMode::stub ? "stub" : "native";
      agg["t_max_ms"] = c.t_max_ms;
      write_file(at / "aggregates.json", agg.dump(2) + "\n");
    };
    if (report.clients.size() == 1) {
      write_client(report.clients.front(), dir);
      return;
    }
    for (const auto& c : report.clients)
      write_client(c, dir / c.name);
  }

  std::string summarize_report(const fs::path& dir)
  {
    std::vector<fs::path> folders;
    if (fs::exists(dir / "aggregates.json")) {
      folders.push_back(dir);
    } else {
      std::error_code ec;
      for (const auto& entry : fs::directory_iterator(dir, ec))
        if (entry.is_directory() && fs::exists(entry.path() / "aggregates.json"))
          folders.push_back(entry.path());
      if (ec)
        throw IoError("cannot list " + dir.string() + ": " + ec.message());
      std::sort(folders.begin(), folders.end());
    }
    if (folders.empty())
      throw IoError("no report found under " + dir.string());

    std::string out;
    for (const auto& folder : folders) {
      auto agg_json = manifest_json::parse_text(read_file(folder / "aggregates.json"));
      auto a = aggregates_from_json(agg_json);
      std::istringstream csv(read_file(folder / "trace.csv"));
      std::string line;
      std::getline(csv, line);
      std::map<std::string, int> winners, actions;
      int timeouts = 0;
      while (std::getline(csv, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');)
          cells.push_back(cell);
        cells.resize(6);
        if (cells[1] == "timeout")
          ++timeouts;
        ++winners[cells[3]];
        if (!cells[5].empty())
          ++actions[cells[5]];
      }
      out += fmt::format("client {} ({})\n", agg_json.value("client", folder.filename().string()),
                         agg_json.value("mode", "stub"));
      out += fmt::format("  requests {}  failures {}  remote timeouts {}\n", a.count, a.failures, timeouts);
      out += fmt::format("  mean {:.3f} ms  sd {:.3f} ms  p50 {:.3f}  p95 {:.3f}  p99 {:.3f}\n", a.mean_ms, a.sd_ms,
                         a.p50, a.p95, a.p99);
      out += fmt::format("  within t_max {:.4f}\n", a.fraction_within_t_max);
      out += "  winners:";
      for (const auto& [k, v] : winners)
        out += fmt::format(" {}={}", k, v);
      out += "\n  actions:";
      for (const auto& [k, v] : actions)
        out += fmt::format(" {}={}", k, v);
      out += "\n";
    }
    return out;
  }

  // ---- payloads ----

  Bytes make_request_payload(SchemaRef schema, std::size_t payload_bytes, std::uint64_t seed, std::int64_t index)
  {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(index));
    switch (schema) {
    case SchemaRef::image_rgb: {
      ImageRgb img;
      img.width = payload_bytes >= 192 ? 64 : 1;
      img.height = static_cast<std::uint32_t>(std::max<std::size_t>(1, payload_bytes / (3 * img.width)));
      img.pixels.resize(std::size_t{img.width} * img.height * 3);
      // smooth gradient with mild sensor noise
      for (std::uint32_t y = 0; y < img.height; ++y)
        for (std::uint32_t x = 0; x < img.width; ++x)
          for (int c = 0; c < 3; ++c) {
            auto base = static_cast<int>((x * 4 + y * 2 + c * 40 + static_cast<std::uint32_t>(index)) % 256);
            auto noise = static_cast<int>(rng() % 5) - 2;
            img.pixels[(std::size_t{y} * img.width + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(base + noise, 0, 255));
          }
      return encode(img);
    }
    case SchemaRef::grid_map: {
      GridMap map;
      auto side = static_cast<std::uint32_t>(std::max(1.0, std::floor(std::sqrt(static_cast<double>(payload_bytes)))));
      map.width = map.height = side;
      map.cells.assign(std::size_t{side} * side, 0);
      for (std::uint32_t i = 0; i < side; ++i)
        map.cells[(rng() % side) * side + i] = 100;
      return encode(map);
    }
    case SchemaRef::blob: {
      Bytes b(payload_bytes);
      for (auto& v : b)
        v = static_cast<std::uint8_t>(rng());
      return b;
    }
    default:
      return synthesize(schema, rng(), static_cast<std::uint64_t>(index));
    }
  }

  // ---- scenario execution ----

  namespace {

    // Client-side link with injected network conditions. The segment is the
    // one covering the client's most recently issued request.
    class SimulatedLink final : public RemoteChannel, public std::enable_shared_from_this<SimulatedLink> {
    public:
      SimulatedLink(Scheduler& scheduler, const Scenario& scenario, std::mt19937_64& rng,
                    std::function<std::int64_t()> index)
        : _scheduler(scheduler), _scenario(scenario), _rng(rng), _index(std::move(index))
      {
      }

      void set_server(std::function<void(std::string)> to_server) { _to_server = std::move(to_server); }

      void set_receiver(Receiver receiver) override
      {
        std::lock_guard lock(_mutex);
        _receiver = std::move(receiver);
      }

      void send(std::string frame) override
      {
        auto delay = draw(frame.size());
        if (!delay)
          return;
        std::weak_ptr<SimulatedLink> weak = weak_from_this();
        _scheduler.after(*delay, [weak, frame = std::move(frame)]() mutable {
          if (auto self = weak.lock(); self && self->_to_server)
            self->_to_server(std::move(frame));
        });
      }

      // Frame leaving the server towards this client.
      void from_server(std::string frame)
      {
        auto delay = draw(frame.size());
        if (!delay)
          return;
        std::weak_ptr<SimulatedLink> weak = weak_from_this();
        _scheduler.after(*delay, [weak, frame = std::move(frame)]() mutable {
          auto self = weak.lock();
          if (!self)
            return;
          Receiver receiver;
          {
            std::lock_guard lock(self->_mutex);
            receiver = self->_receiver;
          }
          if (receiver)
            receiver(std::move(frame));
        });
      }

    private:
      std::optional<double> draw(std::size_t bytes)
      {
        std::lock_guard lock(_mutex);
        return inject_network(_scenario.segment_for(_index()), bytes, _rng);
      }

      Scheduler& _scheduler;
      const Scenario& _scenario;
      std::mt19937_64& _rng;
      std::function<std::int64_t()> _index;
      std::function<void(std::string)> _to_server;
      std::mutex _mutex;
      Receiver _receiver;
    };

    struct ClientRun {
      ClientSpec spec;
      const ServiceSla* sla = nullptr;
      std::mt19937_64 rng;
      std::shared_ptr<SimulatedLink> link;
      std::shared_ptr<Stub> stub;
      std::shared_ptr<Session> session;                 // virtual mode
      std::shared_ptr<WsClient> ws;                     // realtime mode
      std::optional<WorkloadEngine> native_engine;      // native mode
      SchemaRef request_schema = SchemaRef::blob;
      std::mutex mutex;
      std::int64_t issued = 0;
      double last_issue_ms = 0;
      std::vector<std::optional<RequestRow>> rows;
      std::int64_t finished = 0;
      std::map<std::int64_t, double> serving; // seq -> caller latency
    };

    class Runner {
    public:
      Runner(const Scenario& sc, Scheduler& scheduler) : _sc(sc), _scheduler(scheduler) {}

      void add_client(const ClientSpec& spec, const ServicePortal& portal)
      {
        auto entry = portal.service(spec.service);
        if (!entry)
          throw ScenarioError("scenario references undeployed service '" + spec.service + "'");
        const auto* rpc = entry->manifest.interface.find_rpc(spec.target);
        if (!rpc)
          throw ScenarioError("service '" + spec.service + "' has no rpc '" + spec.target + "'");
        auto run = std::make_unique<ClientRun>();
        run->spec = spec;
        run->sla = &_sc.sla_for(spec.service);
        run->rng.seed(_sc.seed + 0x632be59bd9b4e019ull * (_clients.size() + 1));
        run->request_schema = rpc->request_schema;
        run->rows.resize(static_cast<std::size_t>(_sc.request_count));
        if (spec.mode == ClientMode::native) {
          run->native_engine.emplace(entry->manifest, ResourceQuota{_sc.local_cpu_millicores, 256});
        } else {
          auto* raw = run.get();
          run->link = std::make_shared<SimulatedLink>(_scheduler, _sc, run->rng, [raw] {
            return std::max<std::int64_t>(0, raw->issued - 1);
          });
          StubConfig config;
          config.t_desire_ms = run->sla->t_desire_ms;
          config.t_max_ms = run->sla->t_max_ms;
          config.q_threshold = run->sla->q_threshold;
          config.local_cpu_millicores = _sc.local_cpu_millicores;
          config.keepalive_interval_ms = _sc.keepalive_interval_ms;
          config.keepalive_misses = _sc.keepalive_misses;
          run->stub = std::make_shared<Stub>(entry->stub, config, _scheduler, run->link);
          run->stub->on_settled([this, raw](const RequestRecord& r) { on_settled(*raw, r); });
        }
        _clients.push_back(std::move(run));
      }

      std::vector<std::unique_ptr<ClientRun>>& clients() { return _clients; }

      void start()
      {
        for (auto& c : _clients) {
          auto* raw = c.get();
          if (c->stub)
            c->stub->start();
          _scheduler.after(0, [this, raw] { issue(*raw); });
        }
      }

      bool done() const
      {
        std::lock_guard lock(_done_mutex);
        return _finished_clients == _clients.size();
      }

      void wait_done()
      {
        std::unique_lock lock(_done_mutex);
        _done_cv.wait(lock, [&] { return _finished_clients == _clients.size(); });
      }

      MetricsReport report()
      {
        MetricsReport out;
        for (auto& c : _clients) {
          ClientReport cr;
          cr.name = c->spec.name;
          cr.mode = c->spec.mode;
          cr.t_max_ms = c->sla->t_max_ms;
          for (auto& row : c->rows)
            cr.rows.push_back(*row);
          cr.aggregates = aggregate(cr.rows, cr.t_max_ms);
          out.clients.push_back(std::move(cr));
        }
        return out;
      }

      void shutdown()
      {
        for (auto& c : _clients)
          if (c->stub)
            c->stub->shutdown();
      }

    private:
      void issue(ClientRun& c)
      {
        std::int64_t index;
        {
          std::lock_guard lock(c.mutex);
          if (c.issued >= _sc.request_count)
            return;
          index = c.issued++;
          c.last_issue_ms = _scheduler.now_ms();
        }
        auto payload = make_request_payload(c.request_schema, c.spec.payload_bytes, _sc.seed, index);
        double issued_at = _scheduler.now_ms();

        if (c.native_engine) {
          protocol::Envelope call;
          call.op = protocol::Op::call;
          call.id = "n" + std::to_string(index);
          call.target = c.spec.target;
          call.payload = protocol::compress_payload(c.request_schema, payload, protocol::Compression::none);
          auto outcome = c.native_engine->process(call);
          double contention = std::uniform_real_distribution<double>(1.0, 3.0)(c.rng);
          double t = outcome.service_ms * contention;
          _scheduler.after(t, [this, &c, index, t] {
            RequestRow row;
            row.index = index;
            row.t_local_ms = t;
            row.winner = "local";
            row.serving_ms = t;
            finish(c, index, std::move(row));
          });
          return;
        }

        c.stub->call_async(c.spec.target, payload, [this, &c, index, issued_at](Stub::Completion) {
          double served = _scheduler.now_ms() - issued_at;
          {
            std::lock_guard lock(c.mutex);
            c.serving[index] = served;
          }
          schedule_next(c);
        });
      }

      void on_settled(ClientRun& c, const RequestRecord& r)
      {
        RequestRow row;
        row.index = static_cast<std::int64_t>(r.seq);
        row.t_remote_ms = r.t_remote_ms;
        row.remote_timeout = r.remote_timed_out;
        row.t_local_ms = r.t_local_ms;
        row.winner = r.failed ? "error" : std::string(to_string(r.winner));
        row.q_after = r.q_after;
        row.action = r.action;
        row.serving_ms = r.delivered_ms - r.issued_ms;
        finish(c, row.index, std::move(row));
      }

      void finish(ClientRun& c, std::int64_t index, RequestRow row)
      {
        bool native = c.native_engine.has_value();
        bool client_done = false;
        {
          std::lock_guard lock(c.mutex);
          auto& slot = c.rows.at(static_cast<std::size_t>(index));
          if (slot)
            return;
          slot = std::move(row);
          client_done = ++c.finished == _sc.request_count;
        }
        if (native)
          schedule_next(c);
        if (client_done) {
          std::lock_guard lock(_done_mutex);
          ++_finished_clients;
          _done_cv.notify_all();
        }
      }

      void schedule_next(ClientRun& c)
      {
        double wait;
        {
          std::lock_guard lock(c.mutex);
          if (c.issued >= _sc.request_count)
            return;
          wait = std::max(0.0, c.last_issue_ms + c.spec.period_ms - _scheduler.now_ms());
        }
        _scheduler.after(wait, [this, &c] { issue(c); });
      }

      const Scenario& _sc;
      Scheduler& _scheduler;
      std::vector<std::unique_ptr<ClientRun>> _clients;
      mutable std::mutex _done_mutex;
      std::condition_variable _done_cv;
      std::size_t _finished_clients = 0;
    };

    void deploy_all(ServicePortal& portal, const Scenario& sc)
    {
      for (const auto& text : sc.packages)
        portal.deploy_package(text, true);
    }

  } // namespace

  MetricsReport run_scenario(const Scenario& sc, ServicePortal& portal, VirtualScheduler& scheduler)
  {
    sc.validate();
    Runner runner(sc, scheduler);
    for (const auto& spec : sc.workload_timeline)
      runner.add_client(spec, portal);

    for (auto& c : runner.clients()) {
      if (!c->link)
        continue;
      std::weak_ptr<SimulatedLink> weak = c->link;
      c->session = portal.open_session("sim:" + c->spec.name, [weak](const protocol::Envelope& e) {
        if (auto link = weak.lock())
          link->from_server(protocol::encode(e));
      });
      c->link->set_server([&portal, session = c->session](std::string raw) { portal.handle(*session, raw); });
    }

    runner.start();
    // A generous bound on virtual time guards against a scenario that cannot finish.
    double horizon = static_cast<double>(sc.request_count) * 3'600'000.0;
    scheduler.run_while([&] {
      if (scheduler.now_ms() > horizon)
        throw ScenarioError("scenario did not complete within the virtual-time horizon");
      return !runner.done();
    });
    if (!runner.done())
      throw ScenarioError("scenario stalled before every request settled");
    auto report = runner.report();
    runner.shutdown();
    for (auto& c : runner.clients())
      if (c->session)
        portal.close_session(c->session->id());
    scheduler.run(1'000'000);
    return report;
  }

  namespace {

    MetricsReport run_realtime(const Scenario& sc)
    {
      RealScheduler scheduler;
      ServicePortal portal(SlaDictionary::parse(sc.dictionary.dump()), NodePool::parse(sc.nodes.dump()), scheduler,
                           "ws://127.0.0.1:0/ws");
      deploy_all(portal, sc);
      PortalServer server(portal, ServerConfig{"127.0.0.1", 0, {}, 2});
      server.start();
      auto url = fmt::format("ws://127.0.0.1:{}/ws", server.port());

      MetricsReport report;
      {
        Runner runner(sc, scheduler);
        for (const auto& spec : sc.workload_timeline)
          runner.add_client(spec, portal);
        for (auto& c : runner.clients()) {
          if (!c->link)
            continue;
          std::weak_ptr<SimulatedLink> weak = c->link;
          c->ws = std::make_shared<WsClient>(url, "", [weak](std::string frame) {
            if (auto link = weak.lock())
              link->from_server(std::move(frame));
          });
          c->link->set_server([ws = c->ws](std::string raw) { ws->send(std::move(raw)); });
        }
        runner.start();
        runner.wait_done();
        report = runner.report();
        runner.shutdown();
        for (auto& c : runner.clients())
          if (c->ws)
            c->ws->close();
      }
      scheduler.shutdown();
      server.stop();
      return report;
    }

  } // namespace

  MetricsReport run_scenario(const Scenario& sc, bool realtime)
  {
    sc.validate();
    if (realtime)
      return run_realtime(sc);
    VirtualScheduler scheduler;
    ServicePortal portal(SlaDictionary::parse(sc.dictionary.dump()), NodePool::parse(sc.nodes.dump()), scheduler,
                         "ws://127.0.0.1:0/ws");
    deploy_all(portal, sc);
    return run_scenario(sc, portal, scheduler);
  }

} // namespace cloudroid::harness
