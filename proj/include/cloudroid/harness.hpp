#ifndef CLOUDROID_HARNESS_HPP
#define CLOUDROID_HARNESS_HPP

#include <cloudroid/portal.hpp>
#include <cloudroid/satisfaction.hpp>
#include <cloudroid/scheduler.hpp>
#include <cloudroid/stub.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cloudroid::harness {

  struct NetworkSegment {
    std::int64_t from_request = 0; // inclusive
    std::int64_t to_request = 0;   // inclusive
    double base_latency_ms = 0;
    double jitter_ms = 0;
    double bandwidth_kbps = 0; // 0 = unlimited
    bool up = true;
  };

  struct ServiceSla {
    std::string service;
    std::int64_t t_desire_ms = 0;
    std::int64_t t_max_ms = 0;
    std::optional<std::int64_t> q_threshold;
  };

  enum class ClientMode {
    stub,   // through the stub against the portal
    native, // local execution on a contended onboard computer
  };

  struct ClientSpec {
    std::string name;
    std::string service;
    std::string target;
    std::size_t payload_bytes = 0;
    double period_ms = 0; // minimum spacing between issues; closed loop otherwise
    ClientMode mode = ClientMode::stub;
  };

  struct Scenario {
    std::uint64_t seed = 0;
    std::int64_t request_count = 0;
    std::vector<std::string> packages; // manifest texts
    nlohmann::json dictionary = nlohmann::json::array();
    nlohmann::json nodes = nlohmann::json::array();
    std::vector<ServiceSla> services;
    std::vector<NetworkSegment> network_timeline;
    std::vector<ClientSpec> workload_timeline;
    std::int64_t local_cpu_millicores = 1000;
    double keepalive_interval_ms = 2000;
    int keepalive_misses = 3;

    // Throws ScenarioError: segments must be contiguous and cover
    // [0, request_count - 1]; clients must name a declared service.
    void validate() const;
    const ServiceSla& sla_for(const std::string& service) const;
    const NetworkSegment& segment_for(std::int64_t request_index) const;
  };

  // Relative package/dictionary/node paths resolve against `base_dir`.
  // Throws SyntaxError, ScenarioError, IoError.
  Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir = {});
  Scenario load_scenario(const std::filesystem::path& file);

  // Transfer delay of one frame, or nullopt when the segment drops it.
  // delay = base + U(-jitter, +jitter) + bytes * 8 / kbps, clamped at 0.
  std::optional<double> inject_network(const NetworkSegment& segment, std::size_t payload_bytes,
                                       std::mt19937_64& rng);

  // Population standard deviation. Throws EmptyInput.
  double compute_sd(const std::vector<double>& times);
  // Nearest-rank percentile over a non-empty sample. Throws EmptyInput.
  double percentile(std::vector<double> times, double p);

  struct Aggregates {
    double mean_ms = 0;
    double sd_ms = 0;
    double p50 = 0;
    double p95 = 0;
    double p99 = 0;
    double fraction_within_t_max = 0;
    std::size_t count = 0;
    std::size_t failures = 0;

    bool operator==(const Aggregates&) const = default;
  };

  struct RequestRow {
    std::int64_t index = 0;
    std::optional<double> t_remote_ms;
    bool remote_timeout = false;
    std::optional<double> t_local_ms;
    std::string winner; // remote | local | error
    double q_after = 0;
    LocalAction action = LocalAction::none;
    double serving_ms = 0; // caller-observed latency
  };

  struct ClientReport {
    std::string name;
    ClientMode mode = ClientMode::stub;
    std::int64_t t_max_ms = 0;
    std::vector<RequestRow> rows;
    Aggregates aggregates;
  };

  struct MetricsReport {
    std::vector<ClientReport> clients;

    const ClientReport& client(const std::string& name) const;
  };

  // Over the caller-observed serving times of successful requests; the
  // within-t_max fraction is taken over all requests.
  Aggregates aggregate(const std::vector<RequestRow>& rows, std::int64_t t_max_ms);

  std::string csv_header();
  std::string to_csv(const ClientReport& client);
  nlohmann::json to_json(const Aggregates& a);
  Aggregates aggregates_from_json(const nlohmann::json& j);

  // One client: <dir>/trace.csv and <dir>/aggregates.json. Several clients:
  // the same pair under <dir>/<client>/. Throws IoError.
  void emit_report(const MetricsReport& report, const std::filesystem::path& dir);

  // Human-readable digest of a report directory written by emit_report.
  std::string summarize_report(const std::filesystem::path& dir);

  // Builds the request payload (canonical encoding of `schema`) for a given
  // request of a client. Deterministic in (seed, index).
  Bytes make_request_payload(SchemaRef schema, std::size_t payload_bytes, std::uint64_t seed, std::int64_t index);

  // Deterministic run on a virtual clock against an in-process portal whose
  // services are already deployed. Throws ScenarioError for undeployed services.
  MetricsReport run_scenario(const Scenario& scenario, ServicePortal& portal, VirtualScheduler& scheduler);

  // Builds a portal from the scenario's dictionary, nodes and packages, then
  // runs it in virtual time (or wall-clock time over a real WebSocket server).
  MetricsReport run_scenario(const Scenario& scenario, bool realtime = false);

} // namespace cloudroid::harness

#endif
