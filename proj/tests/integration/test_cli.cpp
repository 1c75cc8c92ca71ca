#include <doctest.h>

#include "support/fixtures.hpp"

#include <cloudroid/harness.hpp>
#include <cloudroid/stubgen.hpp>
#include <cloudroid/transport.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sys/wait.h>
#include <thread>

namespace fs = std::filesystem;
using namespace cloudroid;
using nlohmann::json;

namespace {

  struct RunResult {
    int status = -1;
    std::string out;
  };

  RunResult run(const std::string& args)
  {
    auto cmd = fmt::format("\"{}\" {} 2>&1", CLOUDROID_CLI, args);
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    while (auto n = std::fread(buf, 1, sizeof buf, pipe))
      r.out.append(buf, n);
    int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
  }

  fs::path scratch(const std::string& name)
  {
    auto dir = fs::temp_directory_path() / fmt::format("cloudroid_cli_{}_{}", name, ::getpid());
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
  }

  void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

  // A `cloudroid serve` child on a free port.
  class ServeProcess {
  public:
    explicit ServeProcess(const fs::path& dir)
    {
      auto config = dir / "portal.json";
      write(config, json{{"listen", "127.0.0.1:0"},
                         {"dictionary", std::string(CLOUDROID_TEST_DATA) + "/dictionary.json"},
                         {"node_pool", std::string(CLOUDROID_TEST_DATA) + "/nodes.json"},
                         {"packages", json::array()}}
                      .dump());
      _log = dir / "serve.log";
      auto cmd = fmt::format("\"{}\" serve --config \"{}\" > \"{}\" 2>&1 & echo $!", CLOUDROID_CLI, config.string(),
                             _log.string());
      FILE* pipe = popen(cmd.c_str(), "r");
      REQUIRE(pipe);
      char buf[64] = {};
      REQUIRE(std::fgets(buf, sizeof buf, pipe));
      pclose(pipe);
      _pid = std::stoi(buf);

      std::regex re(R"(portal listening on 127\.0\.0\.1:(\d+))");
      for (int i = 0; i < 500 && _port == 0; ++i) {
        std::smatch m;
        auto text = oracle::read_file(_log.string());
        if (std::regex_search(text, m, re))
          _port = std::stoi(m[1]);
        else
          std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      REQUIRE(_port != 0);
    }

    ~ServeProcess()
    {
      ::kill(_pid, SIGTERM);
      for (int i = 0; i < 300 && ::kill(_pid, 0) == 0; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }

    std::string url() const { return fmt::format("http://127.0.0.1:{}", _port); }
    bool alive() const { return ::kill(_pid, 0) == 0; }

  private:
    fs::path _log;
    pid_t _pid = 0;
    int _port = 0;
  };

} // namespace

TEST_CASE("help and usage errors")
{
  CHECK(run("--help").status == 0);
  CHECK(run("").status != 0);
  CHECK(run("deploy").status != 0);
  CHECK(run("report /definitely/not/here").status != 0);
}

TEST_CASE("run-scenario writes a deterministic report")
{
  auto dir = scratch("scenario");
  auto scenario = std::string(CLOUDROID_SCENARIOS) + "/degraded_windows.json";
  auto a = run(fmt::format("run-scenario \"{}\" --out \"{}\"", scenario, (dir / "a").string()));
  REQUIRE_MESSAGE(a.status == 0, a.out);
  auto b = run(fmt::format("run-scenario \"{}\" --out \"{}\"", scenario, (dir / "b").string()));
  REQUIRE(b.status == 0);
  CHECK(a.out.find("within t_max") != std::string::npos);

  auto trace = oracle::read_file((dir / "a" / "trace.csv").string());
  CHECK(trace == oracle::read_file((dir / "b" / "trace.csv").string()));
  CHECK(trace.rfind(harness::csv_header(), 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 181);

  auto agg = json::parse(oracle::read_file((dir / "a" / "aggregates.json").string()));
  CHECK(agg.at("count") == 180);
  CHECK(agg.at("fraction_within_t_max").get<double>() >= 0.9);

  auto report = run(fmt::format("report \"{}\"", (dir / "a").string()));
  CHECK(report.status == 0);
  CHECK(report.out == a.out);

  auto c = run(fmt::format("run-scenario \"{}\" --seed 7 --out \"{}\"", scenario, (dir / "c").string()));
  REQUIRE(c.status == 0);
  CHECK(oracle::read_file((dir / "c" / "trace.csv").string()) != trace);
  fs::remove_all(dir);
}

TEST_CASE("run-scenario rejects a broken scenario")
{
  auto dir = scratch("broken");
  write(dir / "bad.json", R"({"seed": 1, "request_count": 10})");
  auto r = run(fmt::format("run-scenario \"{}\" --out \"{}\"", (dir / "bad.json").string(), (dir / "o").string()));
  CHECK(r.status == 1);
  CHECK(r.out.find("error:") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("serve, deploy and stub fetch")
{
  auto dir = scratch("serve");
  ServeProcess serve(dir);
  auto detect = std::string(CLOUDROID_TEST_DATA) + "/detect.json";

  auto first = run(fmt::format("deploy \"{}\" --portal {}", detect, serve.url()));
  CHECK_MESSAGE(first.status == 0, first.out);
  CHECK(run(fmt::format("deploy \"{}\" --portal {}", detect, serve.url())).status == 0);

  auto changed = json::parse(fixture::data("detect.json"));
  changed["version"] = "1.0.1";
  changed["workload"]["params"]["base_work_ms"] = 150;
  write(dir / "detect2.json", changed.dump());
  CHECK(run(fmt::format("deploy \"{}\" --portal {}", (dir / "detect2.json").string(), serve.url())).status == 1);
  CHECK(run(fmt::format("deploy \"{}\" --portal {} --replace", (dir / "detect2.json").string(), serve.url())).status ==
        0);

  auto out = dir / "detect.stub.json";
  auto fetched = run(fmt::format("stub fetch detect --portal {} --out \"{}\"", serve.url(), out.string()));
  CHECK(fetched.status == 0);
  auto descriptor = parse_descriptor(oracle::read_file(out.string()));
  CHECK(descriptor.service == "detect");
  REQUIRE(descriptor.local_fallback);
  CHECK(numeric_param(descriptor.local_fallback->params, "base_work_ms", 0) == 150);

  CHECK(run(fmt::format("stub fetch nothing --portal {}", serve.url())).status == 1);

  auto servants = http_request(serve.url(), "GET", "/servants");
  CHECK(json::parse(servants.body) == json::array());
  CHECK(serve.alive());
  fs::remove_all(dir);
}

TEST_CASE("worker speaks envelopes on stdio")
{
  auto dir = scratch("worker");
  auto input = dir / "in.txt";
  write(input, R"({"op":"ping","id":"p"})"
               "\n"
               "garbage\n" +
                 protocol::encode(fixture::call("c1", "detect", SchemaRef::image_rgb, fixture::small_image())) + "\n");
  auto r = run(fmt::format("worker --manifest \"{}\" < \"{}\"", std::string(CLOUDROID_TEST_DATA) + "/detect.json",
                           input.string()));
  REQUIRE(r.status == 0);
  std::istringstream lines(r.out);
  std::string line;
  std::vector<protocol::Envelope> replies;
  while (std::getline(lines, line))
    replies.push_back(protocol::decode(line));
  REQUIRE(replies.size() == 3);
  CHECK(replies[0].op == protocol::Op::pong);
  CHECK(replies[1].status->code == "malformed");
  CHECK(replies[2].op == protocol::Op::response);
  CHECK(replies[2].id == "c1");
  fs::remove_all(dir);
}
