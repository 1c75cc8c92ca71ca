#include <cloudroid/errors.hpp>
#include <cloudroid/stubgen.hpp>

#include <nlohmann/json.hpp>

namespace cloudroid {

  using nlohmann::json;

  protocol::Compression StubDescriptor::codec_for(SchemaRef schema) const
  {
    auto it = compression_policy.find(schema);
    return it == compression_policy.end() ? protocol::Compression::none : it->second;
  }

  StubDescriptor generate_stub(const PackageManifest& manifest, const std::string& portal_url)
  {
    StubDescriptor d;
    d.service = manifest.name;
    d.interface = manifest.interface;
    d.stateful = manifest.stateful;
    d.portal_url = portal_url;
    auto note = [&](SchemaRef schema) {
      auto codec = protocol::default_codec(schema);
      if (codec != protocol::Compression::none)
        d.compression_policy[schema] = codec;
    };
    for (const auto& t : manifest.interface.topics)
      note(t.schema);
    for (const auto& r : manifest.interface.rpcs) {
      note(r.request_schema);
      note(r.response_schema);
    }
    d.local_fallback = manifest.workload;
    return d;
  }

  std::string serialize_descriptor(const StubDescriptor& d)
  {
    json policy = json::object();
    for (const auto& [schema, codec] : d.compression_policy)
      policy[std::string(to_string(schema))] = to_string(codec);
    json defaults = {{"q_threshold", d.defaults.q_threshold}};
    if (d.defaults.t_desire_ms)
      defaults["t_desire_ms"] = *d.defaults.t_desire_ms;
    if (d.defaults.t_max_ms)
      defaults["t_max_ms"] = *d.defaults.t_max_ms;
    json j = {
      {"service", d.service},
      {"interface", manifest_json::to_json(d.interface)},
      {"stateful", d.stateful},
      {"portal_url", d.portal_url},
      {"compression_policy", std::move(policy)},
      {"defaults", std::move(defaults)},
    };
    if (d.local_fallback)
      j["local_fallback"] = manifest_json::to_json(*d.local_fallback);
    return j.dump();
  }

  StubDescriptor parse_descriptor(std::string_view raw)
  {
    auto j = manifest_json::parse_text(raw);
    if (!j.is_object())
      throw ValidationError("$", "descriptor must be an object");
    auto str = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string())
        throw ValidationError(key, "expected a string");
      return j[key].get<std::string>();
    };
    StubDescriptor d;
    d.service = str("service");
    d.portal_url = str("portal_url");
    if (!j.contains("stateful") || !j["stateful"].is_boolean())
      throw ValidationError("stateful", "expected a boolean");
    d.stateful = j["stateful"].get<bool>();
    if (!j.contains("interface"))
      throw ValidationError("interface", "missing required key");
    d.interface = manifest_json::interface_from(j["interface"], "interface");

    if (j.contains("compression_policy")) {
      const auto& policy = j["compression_policy"];
      if (!policy.is_object())
        throw ValidationError("compression_policy", "expected an object");
      for (const auto& [key, value] : policy.items()) {
        auto schema = schema_from_string(key);
        auto codec = value.is_string() ? protocol::compression_from_string(value.get<std::string>()) : std::nullopt;
        if (!schema || !codec)
          throw ValidationError("compression_policy." + key, "unknown schema or codec");
        d.compression_policy[*schema] = *codec;
      }
    }
    if (j.contains("local_fallback"))
      d.local_fallback = manifest_json::workload_from(j["local_fallback"], "local_fallback");
    if (j.contains("defaults")) {
      const auto& def = j["defaults"];
      auto integer = [&](const char* key) -> std::optional<std::int64_t> {
        if (!def.contains(key))
          return std::nullopt;
        if (!def[key].is_number_integer() || def[key].get<std::int64_t>() <= 0)
          throw ValidationError(std::string("defaults.") + key, "expected a positive integer");
        return def[key].get<std::int64_t>();
      };
      d.defaults.t_desire_ms = integer("t_desire_ms");
      d.defaults.t_max_ms = integer("t_max_ms");
      d.defaults.q_threshold = integer("q_threshold").value_or(10);
    }
    return d;
  }

  PackageManifest local_manifest(const StubDescriptor& d)
  {
    if (!d.local_fallback)
      throw LocalLaunchError("service '" + d.service + "' has no local fallback");
    PackageManifest m;
    m.name = d.service;
    m.version = "0.0.0";
    m.stateful = d.stateful;
    m.interface = d.interface;
    m.workload = *d.local_fallback;
    return m;
  }

} // namespace cloudroid
