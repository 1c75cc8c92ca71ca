#ifndef CLOUDROID_WORKLOAD_HPP
#define CLOUDROID_WORKLOAD_HPP

#include <cloudroid/manifest.hpp>
#include <cloudroid/protocol.hpp>

#include <cstdint>
#include <vector>

namespace cloudroid {

  // Compute model of a builtin workload. Costs are expressed in milliseconds at
  // 1000 millicores.
  struct WorkloadModel {
    double base_work_ms = 0;
    double per_kb_work_ms = 0;
    double state_growth_ms = 0;

    static WorkloadModel from(const WorkloadSpec& spec);
  };

  // (base + per_kb * kb) * 1000 / cpu_millicores + state_growth * frames_stored
  double service_time_ms(const WorkloadModel& model, std::size_t payload_bytes, std::int64_t cpu_millicores,
                         std::uint64_t frames_stored);

  inline constexpr std::uint64_t fnv_offset = 14695981039346656037ull;
  std::uint64_t fnv1a(ByteView bytes, std::uint64_t state = fnv_offset);

  // Deterministic instance of `schema` derived from `seed`. For blob the result
  // is 16 bytes: u64 frame_count, u64 seed (little-endian).
  Bytes synthesize(SchemaRef schema, std::uint64_t seed, std::uint64_t frame_count);

  // The deterministic computation behind every builtin servant and every local
  // copy. Not thread-safe; owners serialize access.
  class WorkloadEngine {
  public:
    struct Outcome {
      // Response or error for a call; outbound publishes for topic traffic.
      std::vector<protocol::Envelope> replies;
      double service_ms = 0;
    };

    WorkloadEngine(PackageManifest manifest, ResourceQuota quota);

    // Never throws for bad input: schema and target problems become error
    // envelopes (codes schema_error / unknown_target) with zero service time.
    Outcome process(const protocol::Envelope& in);

    std::uint64_t frames_stored() const { return _frames; }
    std::uint64_t checksum() const { return _checksum; }
    const PackageManifest& manifest() const { return _manifest; }
    const ResourceQuota& quota() const { return _quota; }

  private:
    protocol::Envelope respond(const protocol::Envelope& in, SchemaRef schema, std::uint64_t seed) const;

    PackageManifest _manifest;
    ResourceQuota _quota;
    WorkloadModel _model;
    bool _stateful;
    std::uint64_t _frames = 0;
    std::uint64_t _checksum = fnv_offset;
  };

} // namespace cloudroid

#endif
