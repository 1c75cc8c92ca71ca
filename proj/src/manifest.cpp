#include <cloudroid/errors.hpp>
#include <cloudroid/manifest.hpp>

#include <fmt/format.h>

#include <regex>
#include <set>

namespace cloudroid {

  using nlohmann::json;

  namespace {

    const std::regex& identifier_pattern()
    {
      static const std::regex pattern("[a-z][a-z0-9_]{0,62}");
      return pattern;
    }

    const std::regex& semver_pattern()
    {
      static const std::regex pattern(R"((0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)(-[0-9A-Za-z.-]+)?(\+[0-9A-Za-z.-]+)?)");
      return pattern;
    }

    std::string join(const std::string& path, std::string_view key)
    {
      return path.empty() ? std::string(key) : fmt::format("{}.{}", path, key);
    }

    std::string index(const std::string& path, std::size_t i) { return fmt::format("{}[{}]", path, i); }

    void expect_object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed)
    {
      if (!j.is_object())
        throw ValidationError(path.empty() ? "$" : path, "expected an object");
      for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed)
          known = known || key == a;
        if (!known)
          throw ValidationError(join(path, key), "unknown key");
      }
    }

    const json& require(const json& j, const std::string& path, std::string_view key)
    {
      auto it = j.find(key);
      if (it == j.end())
        throw ValidationError(join(path, key), "missing required key");
      return *it;
    }

    std::string require_string(const json& j, const std::string& path, std::string_view key)
    {
      const auto& v = require(j, path, key);
      if (!v.is_string())
        throw ValidationError(join(path, key), "expected a string");
      return v.get<std::string>();
    }

    std::int64_t require_integer(const json& j, const std::string& path, std::string_view key)
    {
      const auto& v = require(j, path, key);
      if (!v.is_number_integer())
        throw ValidationError(join(path, key), "expected an integer");
      if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
        throw ValidationError(join(path, key), "integer out of range");
      return v.get<std::int64_t>();
    }

    SchemaRef require_schema(const json& j, const std::string& path, std::string_view key)
    {
      auto name = require_string(j, path, key);
      auto schema = schema_from_string(name);
      if (!schema)
        throw ValidationError(join(path, key), fmt::format("unregistered schema '{}'", name));
      return *schema;
    }

    std::string require_identifier(const json& j, const std::string& path, std::string_view key)
    {
      auto name = require_string(j, path, key);
      if (!std::regex_match(name, identifier_pattern()))
        throw ValidationError(join(path, key), fmt::format("'{}' is not a valid identifier", name));
      return name;
    }

    std::optional<WorkloadKind> kind_from_string(std::string_view s)
    {
      if (s == "builtin_stateless")
        return WorkloadKind::builtin_stateless;
      if (s == "builtin_stateful")
        return WorkloadKind::builtin_stateful;
      if (s == "external_process")
        return WorkloadKind::external_process;
      return std::nullopt;
    }

    json scalar_to_json(const Scalar& s)
    {
      return std::visit([](const auto& v) { return json(v); }, s);
    }

  } // namespace

  const RpcSpec* InterfaceSpec::find_rpc(std::string_view name) const
  {
    for (const auto& rpc : rpcs)
      if (rpc.name == name)
        return &rpc;
    return nullptr;
  }

  const TopicSpec* InterfaceSpec::find_topic(std::string_view name) const
  {
    for (const auto& topic : topics)
      if (topic.name == name)
        return &topic;
    return nullptr;
  }

  std::string_view to_string(Direction direction)
  {
    return direction == Direction::inbound ? "inbound" : "outbound";
  }

  std::string_view to_string(WorkloadKind kind)
  {
    switch (kind) {
    case WorkloadKind::builtin_stateless:
      return "builtin_stateless";
    case WorkloadKind::builtin_stateful:
      return "builtin_stateful";
    case WorkloadKind::external_process:
      return "external_process";
    }
    return "builtin_stateless";
  }

  bool valid_service_name(std::string_view name)
  {
    return std::regex_match(name.begin(), name.end(), identifier_pattern());
  }

  void validate_quota(const ResourceQuota& quota, const std::string& path)
  {
    if (quota.cpu_millicores < 100 || quota.cpu_millicores > 64000)
      throw ValidationError(join(path, "cpu_millicores"), "must be within [100, 64000]");
    if (quota.memory_mb < 16 || quota.memory_mb > 262144)
      throw ValidationError(join(path, "memory_mb"), "must be within [16, 262144]");
  }

  double numeric_param(const ScalarMap& params, const std::string& key, double fallback)
  {
    auto it = params.find(key);
    if (it == params.end())
      return fallback;
    if (const auto* i = std::get_if<std::int64_t>(&it->second))
      return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&it->second))
      return *d;
    return fallback;
  }

  namespace manifest_json {

    json parse_text(std::string_view raw)
    {
      try {
        return json::parse(raw.begin(), raw.end());
      } catch (const json::parse_error& e) {
        throw SyntaxError(e.what());
      }
    }

    json to_json(const ScalarMap& params)
    {
      json out = json::object();
      for (const auto& [k, v] : params)
        out[k] = scalar_to_json(v);
      return out;
    }

    json to_json(const InterfaceSpec& interface)
    {
      json topics = json::array();
      for (const auto& t : interface.topics)
        topics.push_back({{"name", t.name}, {"direction", to_string(t.direction)}, {"schema", to_string(t.schema)}});
      json rpcs = json::array();
      for (const auto& r : interface.rpcs)
        rpcs.push_back({{"name", r.name},
                        {"request_schema", to_string(r.request_schema)},
                        {"response_schema", to_string(r.response_schema)}});
      return {{"topics", std::move(topics)}, {"rpcs", std::move(rpcs)}};
    }

    json to_json(const WorkloadSpec& workload)
    {
      return {{"kind", to_string(workload.kind)}, {"params", to_json(workload.params)}};
    }

    json to_json(const ResourceQuota& quota)
    {
      return {{"cpu_millicores", quota.cpu_millicores}, {"memory_mb", quota.memory_mb}};
    }

    json to_json(const PackageManifest& m)
    {
      return {
        {"name", m.name},
        {"version", m.version},
        {"stateful", m.stateful},
        {"interface", to_json(m.interface)},
        {"workload", to_json(m.workload)},
        {"default_resources", to_json(m.default_resources)},
      };
    }

    ScalarMap scalars_from(const json& j, const std::string& path)
    {
      if (!j.is_object())
        throw ValidationError(path, "expected an object");
      ScalarMap out;
      for (const auto& [key, v] : j.items()) {
        if (v.is_boolean())
          out.emplace(key, v.get<bool>());
        else if (v.is_number_integer() && !(v.is_number_unsigned() && v.get<std::uint64_t>() > INT64_MAX))
          out.emplace(key, v.get<std::int64_t>());
        else if (v.is_number_float())
          out.emplace(key, v.get<double>());
        else if (v.is_string())
          out.emplace(key, v.get<std::string>());
        else
          throw ValidationError(join(path, key), "expected a scalar");
      }
      return out;
    }

    ResourceQuota quota_from(const json& j, const std::string& path)
    {
      expect_object(j, path, {"cpu_millicores", "memory_mb"});
      ResourceQuota q{require_integer(j, path, "cpu_millicores"), require_integer(j, path, "memory_mb")};
      validate_quota(q, path);
      return q;
    }

    InterfaceSpec interface_from(const json& j, const std::string& path)
    {
      expect_object(j, path, {"topics", "rpcs"});
      InterfaceSpec spec;
      std::set<std::string> seen;

      if (auto it = j.find("topics"); it != j.end()) {
        auto tpath = join(path, "topics");
        if (!it->is_array())
          throw ValidationError(tpath, "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
          const auto& t = (*it)[i];
          auto p = index(tpath, i);
          expect_object(t, p, {"name", "direction", "schema"});
          TopicSpec topic;
          topic.name = require_identifier(t, p, "name");
          auto dir = require_string(t, p, "direction");
          if (dir == "inbound")
            topic.direction = Direction::inbound;
          else if (dir == "outbound")
            topic.direction = Direction::outbound;
          else
            throw ValidationError(join(p, "direction"), "must be inbound or outbound");
          topic.schema = require_schema(t, p, "schema");
          if (!seen.insert(topic.name).second)
            throw ValidationError(join(p, "name"), fmt::format("duplicate name '{}'", topic.name));
          spec.topics.push_back(std::move(topic));
        }
      }

      if (auto it = j.find("rpcs"); it != j.end()) {
        auto rpath = join(path, "rpcs");
        if (!it->is_array())
          throw ValidationError(rpath, "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
          const auto& r = (*it)[i];
          auto p = index(rpath, i);
          expect_object(r, p, {"name", "request_schema", "response_schema"});
          RpcSpec rpc;
          rpc.name = require_identifier(r, p, "name");
          rpc.request_schema = require_schema(r, p, "request_schema");
          rpc.response_schema = require_schema(r, p, "response_schema");
          if (!seen.insert(rpc.name).second)
            throw ValidationError(join(p, "name"), fmt::format("duplicate name '{}'", rpc.name));
          spec.rpcs.push_back(std::move(rpc));
        }
      }

      if (spec.topics.empty() && spec.rpcs.empty())
        throw ValidationError(path, "interface needs at least one topic or rpc");
      return spec;
    }

    WorkloadSpec workload_from(const json& j, const std::string& path)
    {
      expect_object(j, path, {"kind", "params"});
      WorkloadSpec spec;
      auto kind = require_string(j, path, "kind");
      auto parsed = kind_from_string(kind);
      if (!parsed)
        throw ValidationError(join(path, "kind"), fmt::format("unknown workload kind '{}'", kind));
      spec.kind = *parsed;

      auto ppath = join(path, "params");
      if (auto it = j.find("params"); it != j.end())
        spec.params = scalars_from(*it, ppath);

      for (auto key : {"base_work_ms", "per_kb_work_ms", "state_growth_ms"}) {
        auto it = spec.params.find(key);
        if (it == spec.params.end())
          continue;
        if (std::holds_alternative<bool>(it->second) || std::holds_alternative<std::string>(it->second))
          throw ValidationError(join(ppath, key), "expected a number");
        if (numeric_param(spec.params, key, 0) < 0)
          throw ValidationError(join(ppath, key), "must be non-negative");
      }

      bool has_growth = spec.params.contains("state_growth_ms");
      if (spec.kind == WorkloadKind::builtin_stateless && has_growth)
        throw ValidationError(join(ppath, "state_growth_ms"), "not allowed for builtin_stateless");
      if (spec.kind == WorkloadKind::builtin_stateful && !has_growth)
        throw ValidationError(join(ppath, "state_growth_ms"), "required for builtin_stateful");
      if (spec.kind == WorkloadKind::external_process) {
        auto it = spec.params.find("command");
        auto* cmd = it == spec.params.end() ? nullptr : std::get_if<std::string>(&it->second);
        if (!cmd || cmd->empty())
          throw ValidationError(join(ppath, "command"), "external_process requires a command string");
      }
      return spec;
    }

    PackageManifest manifest_from(const json& j)
    {
      expect_object(j, "", {"name", "version", "stateful", "interface", "workload", "default_resources"});
      PackageManifest m;
      m.name = require_identifier(j, "", "name");
      m.version = require_string(j, "", "version");
      if (!std::regex_match(m.version, semver_pattern()))
        throw ValidationError("version", fmt::format("'{}' is not a semver string", m.version));
      const auto& stateful = require(j, "", "stateful");
      if (!stateful.is_boolean())
        throw ValidationError("stateful", "expected a boolean");
      m.stateful = stateful.get<bool>();
      m.interface = interface_from(require(j, "", "interface"), "interface");
      m.workload = workload_from(require(j, "", "workload"), "workload");
      m.default_resources = quota_from(require(j, "", "default_resources"), "default_resources");

      if (m.workload.kind == WorkloadKind::builtin_stateful && !m.stateful)
        throw ValidationError("stateful", "builtin_stateful workload requires stateful=true");
      if (m.workload.kind == WorkloadKind::builtin_stateless && m.stateful)
        throw ValidationError("stateful", "builtin_stateless workload requires stateful=false");
      return m;
    }

  } // namespace manifest_json

  PackageManifest parse_manifest(std::string_view raw)
  {
    return manifest_json::manifest_from(manifest_json::parse_text(raw));
  }

  std::string serialize_manifest(const PackageManifest& manifest)
  {
    return manifest_json::to_json(manifest).dump();
  }

} // namespace cloudroid
