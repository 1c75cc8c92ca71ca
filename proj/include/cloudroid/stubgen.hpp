#ifndef CLOUDROID_STUBGEN_HPP
#define CLOUDROID_STUBGEN_HPP

#include <cloudroid/manifest.hpp>
#include <cloudroid/protocol.hpp>

#include <map>
#include <optional>
#include <string>

namespace cloudroid {

  struct StubDefaults {
    std::optional<std::int64_t> t_desire_ms;
    std::optional<std::int64_t> t_max_ms;
    std::int64_t q_threshold = 10;

    bool operator==(const StubDefaults&) const = default;
  };

  // Everything a client-side stub needs to stand in for a deployed package.
  struct StubDescriptor {
    std::string service;
    InterfaceSpec interface;
    bool stateful = false;
    std::string portal_url;
    // Schemas absent from the map travel uncompressed.
    std::map<SchemaRef, protocol::Compression> compression_policy;
    std::optional<WorkloadSpec> local_fallback;
    StubDefaults defaults;

    bool operator==(const StubDescriptor&) const = default;

    protocol::Compression codec_for(SchemaRef schema) const;
  };

  // Pure function of (manifest, portal_url): interface copied verbatim,
  // image_rgb -> deflate, grid_map -> zlib, local fallback = manifest workload.
  StubDescriptor generate_stub(const PackageManifest& manifest, const std::string& portal_url);

  // Canonical JSON (sorted keys, no whitespace).
  std::string serialize_descriptor(const StubDescriptor& descriptor);
  // Throws SyntaxError / ValidationError.
  StubDescriptor parse_descriptor(std::string_view raw);

  // Manifest for running the descriptor's local fallback as a local copy.
  // Throws LocalLaunchError when the descriptor carries no fallback.
  PackageManifest local_manifest(const StubDescriptor& descriptor);

} // namespace cloudroid

#endif
