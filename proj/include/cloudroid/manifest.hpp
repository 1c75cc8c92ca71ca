#ifndef CLOUDROID_MANIFEST_HPP
#define CLOUDROID_MANIFEST_HPP

#include <cloudroid/schema.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cloudroid {

  using Scalar = std::variant<bool, std::int64_t, double, std::string>;
  using ScalarMap = std::map<std::string, Scalar>;

  struct ResourceQuota {
    std::int64_t cpu_millicores = 1000;
    std::int64_t memory_mb = 256;

    bool operator==(const ResourceQuota&) const = default;

    // True when this quota is at least `other` on both dimensions.
    bool covers(const ResourceQuota& other) const
    {
      return cpu_millicores >= other.cpu_millicores && memory_mb >= other.memory_mb;
    }
  };

  enum class Direction { inbound, outbound };

  struct TopicSpec {
    std::string name;
    Direction direction = Direction::inbound;
    SchemaRef schema = SchemaRef::blob;

    bool operator==(const TopicSpec&) const = default;
  };

  struct RpcSpec {
    std::string name;
    SchemaRef request_schema = SchemaRef::blob;
    SchemaRef response_schema = SchemaRef::blob;

    bool operator==(const RpcSpec&) const = default;
  };

  struct InterfaceSpec {
    std::vector<TopicSpec> topics;
    std::vector<RpcSpec> rpcs;

    bool operator==(const InterfaceSpec&) const = default;

    const RpcSpec* find_rpc(std::string_view name) const;
    const TopicSpec* find_topic(std::string_view name) const;
    bool has_target(std::string_view name) const { return find_rpc(name) || find_topic(name); }
  };

  enum class WorkloadKind { builtin_stateless, builtin_stateful, external_process };

  struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::builtin_stateless;
    ScalarMap params;

    bool operator==(const WorkloadSpec&) const = default;

    bool is_builtin() const { return kind != WorkloadKind::external_process; }
  };

  struct PackageManifest {
    std::string name;
    std::string version;
    bool stateful = false;
    InterfaceSpec interface;
    WorkloadSpec workload;
    ResourceQuota default_resources;

    bool operator==(const PackageManifest&) const = default;
  };

  std::string_view to_string(Direction direction);
  std::string_view to_string(WorkloadKind kind);

  // Throws SyntaxError for malformed JSON and ValidationError (with a field
  // path) for any invariant violation. Unknown keys are rejected.
  PackageManifest parse_manifest(std::string_view raw);

  // Canonical form: sorted keys, no insignificant whitespace.
  std::string serialize_manifest(const PackageManifest& manifest);

  // JSON building blocks shared with the stub descriptor and config loaders.
  namespace manifest_json {
    nlohmann::json to_json(const InterfaceSpec& interface);
    nlohmann::json to_json(const WorkloadSpec& workload);
    nlohmann::json to_json(const ResourceQuota& quota);
    nlohmann::json to_json(const ScalarMap& params);
    nlohmann::json to_json(const PackageManifest& manifest);

    InterfaceSpec interface_from(const nlohmann::json& j, const std::string& path);
    WorkloadSpec workload_from(const nlohmann::json& j, const std::string& path);
    ResourceQuota quota_from(const nlohmann::json& j, const std::string& path);
    ScalarMap scalars_from(const nlohmann::json& j, const std::string& path);
    PackageManifest manifest_from(const nlohmann::json& j);

    // Parses text, translating nlohmann parse failures into SyntaxError.
    nlohmann::json parse_text(std::string_view raw);
  } // namespace manifest_json

  // Validation helpers reused by other loaders.
  void validate_quota(const ResourceQuota& quota, const std::string& path);
  bool valid_service_name(std::string_view name);

  // Numeric parameter lookup with a default; integer and float scalars both count.
  double numeric_param(const ScalarMap& params, const std::string& key, double fallback);

} // namespace cloudroid

#endif
