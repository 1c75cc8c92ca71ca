#include <cloudroid/errors.hpp>
#include <cloudroid/harness.hpp>
#include <cloudroid/portal.hpp>
#include <cloudroid/transport.hpp>
#include <cloudroid/workload.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace cloudroid;
using nlohmann::json;

namespace {

  std::string read_file(const std::filesystem::path& path)
  {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // ws://host:port/ws and http://host:port both name the same portal.
  std::string http_base(const std::string& portal)
  {
    auto ep = parse_url(portal);
    return fmt::format("http://{}:{}", ep.host, ep.port);
  }

  volatile std::sig_atomic_t g_stop = 0;
  void on_signal(int) { g_stop = 1; }

  int serve(const std::string& config_path)
  {
    auto base = std::filesystem::path(config_path).parent_path();
    auto cfg = manifest_json::parse_text(read_file(config_path));
    auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? p : (base / p).string(); };

    ServerConfig server_cfg;
    auto listen = cfg.value("listen", std::string("127.0.0.1:8080"));
    auto colon = listen.rfind(':');
    if (colon == std::string::npos)
      throw Error("listen must be host:port");
    server_cfg.address = listen.substr(0, colon);
    server_cfg.port = static_cast<std::uint16_t>(std::stoi(listen.substr(colon + 1)));
    server_cfg.token = cfg.value("token", std::string());
    server_cfg.threads = cfg.value("threads", 2);

    auto dictionary = cfg.contains("dictionary") ? read_file(resolve(cfg["dictionary"].get<std::string>())) : "[]";
    auto nodes = read_file(resolve(cfg.at("node_pool").get<std::string>()));

    RealScheduler scheduler;
    std::string url = cfg.value("portal_url", fmt::format("ws://{}/ws", listen));
    ServicePortal portal(SlaDictionary::parse(dictionary), NodePool::parse(nodes), scheduler, url);
    for (const auto& p : cfg.value("packages", json::array()))
      portal.deploy_package(read_file(resolve(p.get<std::string>())), true);

    PortalServer server(portal, server_cfg);
    server.start();
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    fmt::print("portal listening on {}:{}\n", server_cfg.address, server.port());
    std::fflush(stdout);
    while (!g_stop)
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    scheduler.shutdown();
    return 0;
  }

  int deploy(const std::string& manifest_path, const std::string& portal, bool replace, const std::string& token)
  {
    auto res = http_request(http_base(portal), "POST", replace ? "/packages?replace=true" : "/packages",
                            read_file(manifest_path), token);
    fmt::print("{}\n", res.body);
    return res.status / 100 == 2 ? 0 : 1;
  }

  int stub_fetch(const std::string& service, const std::string& portal, const std::string& out,
                 const std::string& token)
  {
    auto res = http_request(http_base(portal), "GET", "/stubs/" + service, {}, token);
    if (res.status != 200) {
      fmt::print(stderr, "{}\n", res.body);
      return 1;
    }
    if (out.empty()) {
      fmt::print("{}\n", res.body);
    } else {
      std::ofstream f(out, std::ios::binary);
      if (!(f << res.body))
        throw IoError("cannot write " + out);
    }
    return 0;
  }

  int run_scenario_cmd(const std::string& file, std::optional<std::uint64_t> seed, const std::string& out,
                       bool realtime)
  {
    auto sc = harness::load_scenario(file);
    if (seed)
      sc.seed = *seed;
    auto report = harness::run_scenario(sc, realtime);
    harness::emit_report(report, out);
    fmt::print("{}", harness::summarize_report(out));
    return 0;
  }

  // External-process workload: newline-delimited envelopes on stdin/stdout.
  int worker(const std::string& manifest_path)
  {
    auto manifest = parse_manifest(read_file(manifest_path));
    if (!manifest.workload.is_builtin()) {
      // the command launching this worker describes the compute model in its params
      manifest.workload.kind = manifest.stateful ? WorkloadKind::builtin_stateful : WorkloadKind::builtin_stateless;
      if (manifest.stateful && !manifest.workload.params.count("state_growth_ms"))
        manifest.workload.params["state_growth_ms"] = 0.0;
    }
    ResourceQuota quota;
    if (const char* cpu = std::getenv("CLOUDROID_CPU_MILLICORES"))
      quota.cpu_millicores = std::atoll(cpu);
    if (const char* mem = std::getenv("CLOUDROID_MEMORY_MB"))
      quota.memory_mb = std::atoll(mem);
    WorkloadEngine engine(manifest, quota);
    std::string line;
    while (std::getline(std::cin, line)) {
      if (line.empty())
        continue;
      protocol::Envelope in;
      try {
        in = protocol::decode(line);
      } catch (const ProtocolError& e) {
        std::cout << protocol::encode(protocol::make_error("", "", e.code, e.what())) << '\n' << std::flush;
        continue;
      }
      if (in.op == protocol::Op::ping) {
        protocol::Envelope pong;
        pong.op = protocol::Op::pong;
        pong.id = in.id;
        std::cout << protocol::encode(pong) << '\n' << std::flush;
        continue;
      }
      auto outcome = engine.process(in);
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(outcome.service_ms));
      for (const auto& reply : outcome.replies)
        std::cout << protocol::encode(reply) << '\n';
      std::cout << std::flush;
    }
    return 0;
  }

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"cloudroid: QoS-aware service wrapping and offloading"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  std::string config;
  auto* serve_cmd = app.add_subcommand("serve", "run the service portal");
  serve_cmd->add_option("--config", config, "portal config JSON")->required()->check(CLI::ExistingFile);

  std::string manifest, portal, token;
  bool replace = false;
  auto* deploy_cmd = app.add_subcommand("deploy", "deploy a package manifest");
  deploy_cmd->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  deploy_cmd->add_option("--portal", portal, "portal URL")->required();
  deploy_cmd->add_flag("--replace", replace, "replace an existing package with different content");
  deploy_cmd->add_option("--token", token, "bearer token");

  std::string service, stub_out;
  auto* stub_cmd = app.add_subcommand("stub", "stub repository access");
  stub_cmd->require_subcommand(1);
  auto* fetch_cmd = stub_cmd->add_subcommand("fetch", "download a stub descriptor");
  fetch_cmd->add_option("service", service)->required();
  fetch_cmd->add_option("--portal", portal, "portal URL")->required();
  fetch_cmd->add_option("--out", stub_out, "write to file instead of stdout");
  fetch_cmd->add_option("--token", token, "bearer token");

  std::string scenario, out_dir;
  std::optional<std::uint64_t> seed;
  bool realtime = false;
  auto* run_cmd = app.add_subcommand("run-scenario", "run a QoS scenario and write its report");
  run_cmd->add_option("scenario", scenario)->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seed, "override the scenario seed");
  run_cmd->add_option("--out", out_dir, "report directory")->required();
  run_cmd->add_flag("--realtime", realtime, "wall-clock run over a real WebSocket portal");

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "summarize a report directory");
  report_cmd->add_option("dir", report_dir)->required()->check(CLI::ExistingDirectory);

  std::string worker_manifest;
  auto* worker_cmd = app.add_subcommand("worker", "external-process workload speaking envelopes on stdio");
  worker_cmd->add_option("--manifest", worker_manifest)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
  if (*worker_cmd)
    spdlog::set_level(spdlog::level::off);

  try {
    if (*serve_cmd) {
      spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
      return serve(config);
    }
    if (*deploy_cmd)
      return deploy(manifest, portal, replace, token);
    if (*fetch_cmd)
      return stub_fetch(service, portal, stub_out, token);
    if (*run_cmd)
      return run_scenario_cmd(scenario, seed, out_dir, realtime);
    if (*report_cmd) {
      fmt::print("{}", harness::summarize_report(report_dir));
      return 0;
    }
    if (*worker_cmd)
      return worker(worker_manifest);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
