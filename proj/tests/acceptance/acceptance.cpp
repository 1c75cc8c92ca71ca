#include "support/fixtures.hpp"

#include <cloudroid/choreographer.hpp>
#include <cloudroid/harness.hpp>
#include <cloudroid/satisfaction.hpp>
#include <cloudroid/stub.hpp>
#include <cloudroid/stubgen.hpp>
#include <cloudroid/transport.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

namespace fs = std::filesystem;
using namespace cloudroid;
using nlohmann::json;

namespace {

  struct Verdict {
    bool pass = false;
    std::string detail;
  };

  using Clock = std::chrono::steady_clock;

  double elapsed_s(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

  int to_code(LocalAction a) { return a == LocalAction::start_local ? 1 : a == LocalAction::stop_local ? 2 : 0; }

  Verdict policy_oracle_equivalence()
  {
    auto t0 = Clock::now();
    std::mt19937_64 rng(20240);
    int mismatches = 0;
    for (int trace_no = 0; trace_no < 1000; ++trace_no) {
      std::int64_t q_t = 1 + rng() % 30;
      std::int64_t t_desire = 10 + rng() % 500;
      std::int64_t t_max = t_desire + rng() % 1000;
      std::uniform_real_distribution<double> value(0, 4.0 * t_max);
      std::vector<double> trace(rng() % 201);
      for (auto& t : trace)
        t = rng() % 4 == 0 ? static_cast<double>((rng() % 2) ? t_desire : t_max) : value(rng);

      auto expected = oracle::local_restart_policy(q_t, q_t, t_desire, t_max, 4.0 * q_t, trace);
      auto s = SatisfactionState::initial(q_t, t_desire, t_max);
      for (std::size_t i = 0; i < trace.size(); ++i) {
        auto u = update_satisfaction(s, trace[i]);
        if (u.state.q != expected[i].q || to_code(u.action) != expected[i].action) {
          ++mismatches;
          break;
        }
        s = u.state;
      }
    }
    double secs = elapsed_s(t0);
    return {mismatches == 0 && secs < 5.0, fmt::format("1000 traces, {} mismatching, {:.3f} s", mismatches, secs)};
  }

  Verdict hand_trace()
  {
    auto s = SatisfactionState::initial(10, 100, 300);
    std::vector<double> q;
    std::vector<LocalAction> actions;
    for (double t : {400, 400, 90, 90, 90, 90}) {
      auto u = update_satisfaction(s, t);
      s = u.state;
      q.push_back(s.q);
      actions.push_back(u.action);
    }
    std::vector<double> want_q{5, 2.5, 4.5, 6.5, 8.5, 10.5};
    std::vector<LocalAction> want_a{LocalAction::start_local, LocalAction::none, LocalAction::none,
                                    LocalAction::none,        LocalAction::none, LocalAction::stop_local};
    return {q == want_q && actions == want_a, fmt::format("q trace [{}]", fmt::join(q, ", "))};
  }

  Verdict degraded_windows_scenario()
  {
    auto t0 = Clock::now();
    auto sc = harness::load_scenario(fs::path(CLOUDROID_SCENARIOS) / "degraded_windows.json");
    auto first = harness::run_scenario(sc);
    auto second = harness::run_scenario(sc);
    const auto& client = first.clients.at(0);

    auto base = fs::temp_directory_path() / fmt::format("cloudroid_acceptance_{}", ::getpid());
    harness::emit_report(first, base / "a");
    harness::emit_report(second, base / "b");
    bool identical = oracle::read_file((base / "a" / "trace.csv").string()) ==
                       oracle::read_file((base / "b" / "trace.csv").string()) &&
                     harness::to_csv(client) == harness::to_csv(second.clients.at(0));
    fs::remove_all(base);

    std::vector<std::string> reaction;
    bool all_windows = true;
    for (std::int64_t onset : {24, 75, 111}) {
      std::optional<std::int64_t> hit;
      for (const auto& row : client.rows)
        if (row.action == LocalAction::start_local && row.index >= onset && row.index <= onset + 3) {
          hit = row.index;
          break;
        }
      all_windows = all_windows && hit.has_value();
      reaction.push_back(hit ? fmt::format("{}+{}", onset, *hit - onset) : fmt::format("{}:none", onset));
    }
    double fraction = client.aggregates.fraction_within_t_max;
    double secs = elapsed_s(t0);
    return {all_windows && fraction >= 0.9 && identical && secs < 10.0,
            fmt::format("start_local at [{}], within t_max {:.4f}, rerun identical {}, {:.3f} s", fmt::join(reaction, " "),
                        fraction, identical, secs)};
  }

  Verdict sd_native_vs_cloud()
  {
    auto t0 = Clock::now();
    auto sc = harness::load_scenario(fs::path(CLOUDROID_SCENARIOS) / "sd.json");
    int wins = 0;
    double worst_gap = 1e300;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      sc.seed = seed;
      auto report = harness::run_scenario(sc);
      double native = report.client("native").aggregates.sd_ms;
      double cloud = report.client("cloud").aggregates.sd_ms;
      if (native > cloud)
        ++wins;
      worst_gap = std::min(worst_gap, native - cloud);
    }
    double secs = elapsed_s(t0);
    return {wins == 20 && secs < 10.0,
            fmt::format("{}/20 seeds, smallest SD gap {:.2f} ms, {:.3f} s", wins, worst_gap, secs)};
  }

  // Measured on a servant granted exactly `cpu`: virtual time from call to response.
  double measured_detector_ms(std::int64_t cpu, const Bytes& image)
  {
    VirtualScheduler sched;
    auto portal = fixture::make_portal(sched);
    fixture::Inbox inbox;
    auto session = portal->open_session("probe", inbox.sink());
    protocol::Envelope req;
    req.op = protocol::Op::request_service;
    req.id = "g";
    req.target = "detect";
    req.sla = protocol::SlaDeclaration{std::nullopt, ResourceQuota{cpu, 256}};
    portal->handle(*session, req);
    sched.run();
    if (inbox.frames.empty() || inbox.frames.back().op != protocol::Op::service_granted)
      throw Error(fmt::format("no grant at {} millicores", cpu));
    double start = sched.now_ms();
    portal->handle(*session, fixture::call("c", "detect", SchemaRef::image_rgb, image));
    sched.run();
    if (inbox.frames.back().op != protocol::Op::response)
      throw Error("detector did not respond");
    return sched.now_ms() - start;
  }

  Verdict cpu_scaling()
  {
    auto image = fixture::small_image(48, 64);
    std::vector<double> times;
    for (std::int64_t cpu : {500, 1000, 2000, 4000})
      times.push_back(measured_detector_ms(cpu, image));
    bool ok = true;
    std::vector<std::string> ratios;
    for (std::size_t i = 1; i < times.size(); ++i) {
      double r = times[i] / times[i - 1];
      ratios.push_back(fmt::format("{:.4f}", r));
      ok = ok && std::abs(r - 0.5) <= 0.5 * 0.05;
    }
    return {ok, fmt::format("service ms [{:.2f}], step ratios [{}]", fmt::join(times, ", "), fmt::join(ratios, ", "))};
  }

  Verdict multiplexing_isolation()
  {
    std::mt19937 rng(6);
    int diverged = 0;
    for (int round = 0; round < 50; ++round) {
      VirtualScheduler s;
      auto portal = fixture::make_portal(s);
      fixture::Inbox a, b;
      auto s1 = portal->open_session("a", a.sink());
      auto s2 = portal->open_session("b", b.sink());
      portal->handle(*s1, fixture::request_service("g", "mapper", 200, 400));
      portal->handle(*s2, fixture::request_service("g", "mapper", 200, 400));
      s.run();
      auto quota = portal->servants().at(0).quota;

      std::vector<protocol::Envelope> stream_a, stream_b;
      for (int i = 0; i < 50; ++i) {
        stream_a.push_back(fixture::call("a" + std::to_string(i), "update", SchemaRef::image_rgb,
                                         fixture::small_image(8, 6, static_cast<std::uint8_t>(rng()))));
        stream_b.push_back(fixture::call("b" + std::to_string(i), "update", SchemaRef::image_rgb,
                                         fixture::small_image(8, 6, static_cast<std::uint8_t>(rng()))));
      }
      std::size_t ia = 0, ib = 0;
      while (ia < stream_a.size() || ib < stream_b.size()) {
        bool pick_a = ib == stream_b.size() || (ia < stream_a.size() && rng() % 2 == 0);
        if (pick_a)
          portal->handle(*s1, stream_a[ia++]);
        else
          portal->handle(*s2, stream_b[ib++]);
        if (rng() % 3 == 0)
          s.run(1);
      }
      s.run();

      for (auto [stream, inbox] : {std::pair{&stream_a, &a}, std::pair{&stream_b, &b}}) {
        WorkloadEngine replay(fixture::mapper_manifest(), quota);
        std::vector<std::string> expected, got;
        for (const auto& c : *stream)
          expected.push_back(protocol::encode(replay.process(c).replies.at(0)));
        for (std::size_t i = 1; i < inbox->frames.size(); ++i)
          got.push_back(protocol::encode(inbox->frames[i]));
        if (got != expected)
          ++diverged;
      }
    }
    return {diverged == 0, fmt::format("50 interleavings, {} diverging session streams", diverged)};
  }

  Verdict resource_conservation()
  {
    std::mt19937 rng(77);
    int violations = 0, misplaced = 0, nondeterministic = 0;
    for (int seq = 0; seq < 10000; ++seq) {
      std::vector<Node> nodes;
      int n_nodes = 1 + rng() % 4;
      for (int i = 0; i < n_nodes; ++i)
        nodes.push_back({"n" + std::to_string(i), 1000 + std::int64_t(rng() % 8) * 500, 256 + std::int64_t(rng() % 8) * 256});
      struct Op {
        bool allocate;
        ResourceQuota quota;
        std::size_t pick;
      };
      std::vector<Op> ops(10 + rng() % 30);
      for (auto& op : ops)
        op = {rng() % 3 != 0, {100 + std::int64_t(rng() % 20) * 100, 16 + std::int64_t(rng() % 16) * 64}, rng()};

      auto play = [&](oracle::Ledger* ledger) {
        NodePool pool(nodes);
        std::vector<std::string> placements;
        std::vector<std::tuple<std::string, std::string, ResourceQuota>> live;
        for (std::size_t step = 0; step < ops.size(); ++step) {
          const auto& op = ops[step];
          if (op.allocate || live.empty()) {
            auto id = "s" + std::to_string(step);
            std::string expected = ledger ? ledger->best_fit(op.quota.cpu_millicores, op.quota.memory_mb) : "";
            try {
              auto node = schedule(op.quota, pool, id);
              placements.push_back(node);
              live.emplace_back(node, id, op.quota);
              if (ledger) {
                if (node != expected)
                  ++misplaced;
                ledger->allocate(node, id, op.quota.cpu_millicores, op.quota.memory_mb);
              }
            } catch (const InsufficientResources&) {
              placements.push_back("-");
              if (ledger && ledger->any_fits(op.quota.cpu_millicores, op.quota.memory_mb))
                ++misplaced;
            }
          } else {
            auto k = op.pick % live.size();
            auto [node, id, q] = live[k];
            pool.free(node, id, q);
            if (ledger)
              ledger->release(node, id);
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
          }
          if (ledger) {
            if (!ledger->within_capacity())
              ++violations;
            for (const auto& n : pool.nodes())
              if (n.cpu_used != ledger->cpu_used(n.node_id) || n.memory_used != ledger->mem_used(n.node_id) ||
                  n.cpu_used > n.cpu_millicores_total || n.memory_used > n.memory_mb_total)
                ++violations;
          }
        }
        return placements;
      };

      oracle::Ledger ledger;
      for (const auto& n : nodes)
        ledger.add_node(n.node_id, n.cpu_millicores_total, n.memory_mb_total);
      if (play(&ledger) != play(nullptr))
        ++nondeterministic;
    }
    return {violations == 0 && misplaced == 0 && nondeterministic == 0,
            fmt::format("10000 sequences, {} capacity violations, {} placements off the ledger, {} non-deterministic",
                        violations, misplaced, nondeterministic)};
  }

  Verdict compression()
  {
    auto grid = encode(GridMap{512, 512, Bytes(512 * 512, 0)});
    auto packed = protocol::compress_payload(SchemaRef::grid_map, grid, protocol::Compression::zlib);
    double ratio = protocol::compression_ratio(grid.size(), protocol::base64_decode(packed.data).size());

    std::mt19937 rng(8);
    int lossy = 0;
    const protocol::Compression codecs[] = {protocol::Compression::none, protocol::Compression::deflate,
                                            protocol::Compression::zlib};
    for (int i = 0; i < 1000; ++i) {
      Bytes b(rng() % 8192);
      bool noisy = rng() % 2;
      for (auto& x : b)
        x = static_cast<std::uint8_t>(noisy ? rng() : rng() % 3);
      auto codec = codecs[i % 3];
      if (protocol::decompress_payload(protocol::compress_payload(SchemaRef::blob, b, codec)) != b)
        ++lossy;
    }
    return {ratio >= 0.99 && lossy == 0,
            fmt::format("zero grid {} B -> ratio {:.5f}; 1000 round-trips, {} lossy", grid.size(), ratio, lossy)};
  }

  Verdict on_demand_instantiation()
  {
    RealScheduler scheduler;
    auto portal = fixture::make_portal(scheduler, false);
    PortalServer server(*portal, ServerConfig{"127.0.0.1", 0, "", 2});
    server.start();
    auto http = fmt::format("http://127.0.0.1:{}", server.port());

    auto deployed = http_request(http, "POST", "/packages", fixture::data("detect.json"));
    auto after_deploy = json::parse(http_request(http, "GET", "/servants").body);

    WsClient client(fmt::format("ws://127.0.0.1:{}/ws", server.port()), "");
    client.send(protocol::encode(fixture::request_service("g", "detect")));
    auto reply = client.receive(std::chrono::milliseconds(5000));
    auto after_request = json::parse(http_request(http, "GET", "/servants").body);

    std::vector<std::string> kinds;
    for (const auto& e : portal->trace())
      kinds.push_back(e.kind);
    client.close();
    server.stop();
    scheduler.shutdown();

    bool granted = reply && protocol::decode(*reply).op == protocol::Op::service_granted;
    std::vector<std::string> want{"deploy", "request_service", "servant_created"};
    bool ordered = kinds.size() >= 3 && std::equal(want.begin(), want.end(), kinds.begin());
    return {deployed.status == 201 && after_deploy.empty() && granted && after_request.size() == 1 && ordered,
            fmt::format("servants after deploy {}, after request_service {}, trace [{}]", after_deploy.size(),
                        after_request.size(), fmt::join(kinds, ", "))};
  }

  Verdict failover_liveness()
  {
    VirtualScheduler sched;
    auto manifest = fixture::detect_manifest();
    auto remote = std::make_shared<fixture::ScriptedRemote>(sched, manifest, manifest.default_resources);
    remote->down = true;
    StubConfig cfg;
    cfg.t_desire_ms = 100;
    cfg.t_max_ms = 300;
    Stub stub(generate_stub(manifest, "ws://127.0.0.1:9/ws"), cfg, sched, remote);
    std::vector<RequestRecord> settled;
    stub.on_settled([&](const RequestRecord& r) { settled.push_back(r); });
    stub.start();

    auto image = fixture::small_image(32, 32);
    double local_ms =
      service_time_ms(WorkloadModel::from(manifest.workload), image.size(), cfg.local_cpu_millicores, 0);
    double bound = 2.0 * static_cast<double>(*cfg.t_max_ms) + local_ms;

    int completed = 0, failed = 0;
    double worst = 0;
    const int n = 100;
    for (int i = 0; i < n; ++i) {
      double issued = sched.now_ms();
      stub.call_async("detect", image, [&, issued](Stub::Completion c) {
        if (c.outcome)
          ++completed;
        else
          ++failed;
        worst = std::max(worst, sched.now_ms() - issued);
      });
      sched.run_until(sched.now_ms() + 250);
    }
    sched.run_until(sched.now_ms() + 5000);
    stub.shutdown();
    return {completed == n && failed == 0 && worst <= bound + 1e-9,
            fmt::format("{}/{} completed, worst latency {:.2f} ms, bound {:.2f} ms, final mode {}", completed, n, worst,
                        bound, to_string(stub.mode()))};
  }

} // namespace

int main()
{
  spdlog::set_level(spdlog::level::off);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
    {"restart policy matches the reference on random traces", policy_oracle_equivalence},
    {"hand trace from q=10", hand_trace},
    {"three-window latency scenario", degraded_windows_scenario},
    {"native latency varies more than cloud", sd_native_vs_cloud},
    {"detector service time scales with cpu", cpu_scaling},
    {"stateful sessions stay isolated", multiplexing_isolation},
    {"placement conserves capacity", resource_conservation},
    {"payload compression", compression},
    {"servants start on demand", on_demand_instantiation},
    {"link loss with a local fallback stays live", failover_liveness},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    fmt::print("{} {:2} {}: {}\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail);
  }
  return failures == 0 ? 0 : 1;
}
