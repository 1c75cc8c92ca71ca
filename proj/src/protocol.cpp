#include <cloudroid/errors.hpp>
#include <cloudroid/protocol.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <array>

namespace cloudroid::protocol {

  using nlohmann::json;

  namespace {

    constexpr std::array<std::pair<Op, std::string_view>, 8> op_names{{
      {Op::request_service, "request_service"},
      {Op::service_granted, "service_granted"},
      {Op::publish, "publish"},
      {Op::call, "call"},
      {Op::response, "response"},
      {Op::error, "error"},
      {Op::ping, "ping"},
      {Op::pong, "pong"},
    }};

    [[noreturn]] void violated(const std::string& rule) { throw ProtocolError(std::string(codes::invariant), rule); }

    void only_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed)
    {
      if (!j.is_object())
        violated(fmt::format("{} must be an object", where));
      for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto a : allowed)
          ok = ok || key == a;
        if (!ok)
          violated(fmt::format("unknown key '{}' in {}", key, where));
      }
    }

    std::string string_field(const json& j, std::string_view key, std::string_view where, bool required)
    {
      auto it = j.find(key);
      if (it == j.end()) {
        if (required)
          violated(fmt::format("{}.{} is required", where, key));
        return {};
      }
      if (!it->is_string())
        violated(fmt::format("{}.{} must be a string", where, key));
      return it->get<std::string>();
    }

    std::int64_t positive_int(const json& j, std::string_view key, std::string_view where)
    {
      auto it = j.find(key);
      if (it == j.end() || !it->is_number_integer())
        violated(fmt::format("{}.{} must be an integer", where, key));
      if (it->is_number_unsigned() && it->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
        violated(fmt::format("{}.{} out of range", where, key));
      auto v = it->get<std::int64_t>();
      if (v <= 0)
        violated(fmt::format("{}.{} must be positive", where, key));
      return v;
    }

    json payload_json(const Payload& p)
    {
      return {{"schema", to_string(p.schema)}, {"compression", to_string(p.compression)}, {"data", p.data}};
    }

    Payload payload_from(const json& j)
    {
      only_keys(j, "payload", {"schema", "compression", "data"});
      Payload p;
      auto schema = schema_from_string(string_field(j, "schema", "payload", true));
      if (!schema)
        violated("payload.schema is not a registered schema");
      p.schema = *schema;
      auto codec = compression_from_string(string_field(j, "compression", "payload", true));
      if (!codec)
        violated("payload.compression must be none, deflate or zlib");
      p.compression = *codec;
      p.data = string_field(j, "data", "payload", true);
      return p;
    }

    json sla_json(const SlaDeclaration& sla)
    {
      json j = json::object();
      if (sla.times)
        j["times"] = {{"t_desire_ms", sla.times->t_desire_ms}, {"t_max_ms", sla.times->t_max_ms}};
      if (sla.resources)
        j["resources"] = manifest_json::to_json(*sla.resources);
      return j;
    }

    SlaDeclaration sla_from(const json& j)
    {
      only_keys(j, "sla", {"times", "resources"});
      SlaDeclaration sla;
      if (auto it = j.find("times"); it != j.end()) {
        only_keys(*it, "sla.times", {"t_desire_ms", "t_max_ms"});
        sla.times = SlaTimes{positive_int(*it, "t_desire_ms", "sla.times"), positive_int(*it, "t_max_ms", "sla.times")};
      }
      if (auto it = j.find("resources"); it != j.end()) {
        only_keys(*it, "sla.resources", {"cpu_millicores", "memory_mb"});
        sla.resources =
          ResourceQuota{positive_int(*it, "cpu_millicores", "sla.resources"), positive_int(*it, "memory_mb", "sla.resources")};
      }
      return sla;
    }

  } // namespace

  std::string_view to_string(Op op)
  {
    for (const auto& [o, name] : op_names)
      if (o == op)
        return name;
    return "ping";
  }

  std::optional<Op> op_from_string(std::string_view s)
  {
    for (const auto& [o, name] : op_names)
      if (name == s)
        return o;
    return std::nullopt;
  }

  std::string_view to_string(Compression c)
  {
    switch (c) {
    case Compression::none:
      return "none";
    case Compression::deflate:
      return "deflate";
    case Compression::zlib:
      return "zlib";
    }
    return "none";
  }

  std::optional<Compression> compression_from_string(std::string_view s)
  {
    if (s == "none")
      return Compression::none;
    if (s == "deflate")
      return Compression::deflate;
    if (s == "zlib")
      return Compression::zlib;
    return std::nullopt;
  }

  void check_invariants(const Envelope& e)
  {
    switch (e.op) {
    case Op::call:
      if (e.id.empty())
        violated("call requires a non-empty id");
      if (e.target.empty())
        violated("call requires an rpc target");
      if (!e.payload)
        violated("call requires a payload");
      break;
    case Op::response:
      if (e.id.empty())
        violated("response requires the id of its call");
      break;
    case Op::publish:
      if (e.target.empty())
        violated("publish requires a topic target");
      if (!e.payload)
        violated("publish requires a payload");
      break;
    case Op::request_service:
      if (e.target.empty())
        violated("request_service requires a service target");
      if (!e.sla || e.sla->times.has_value() == e.sla->resources.has_value())
        violated("request_service requires exactly one of sla.times or sla.resources");
      break;
    case Op::error:
      if (!e.status)
        violated("error requires a status");
      break;
    default:
      break;
    }
    if (e.sla && e.op != Op::request_service)
      violated("sla is only allowed on request_service");
    if (e.status && e.op != Op::error)
      violated("status is only allowed on error");
    if (e.sla && e.sla->times) {
      const auto& t = *e.sla->times;
      if (t.t_desire_ms <= 0 || t.t_max_ms <= 0)
        violated("sla times must be positive");
      if (t.t_desire_ms > t.t_max_ms)
        violated("sla.times requires t_desire_ms <= t_max_ms");
    }
    if (e.sla && e.sla->resources) {
      try {
        validate_quota(*e.sla->resources, "sla.resources");
      } catch (const ValidationError& err) {
        violated(err.what());
      }
    }
  }

  std::string encode(const Envelope& e)
  {
    json j = {{"op", to_string(e.op)}, {"id", e.id}, {"target", e.target}};
    if (e.payload)
      j["payload"] = payload_json(*e.payload);
    if (e.sla)
      j["sla"] = sla_json(*e.sla);
    if (e.status)
      j["status"] = {{"code", e.status->code}, {"detail", e.status->detail}};
    // replace invalid UTF-8 rather than throwing on caller-supplied detail text
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
  }

  Envelope decode(std::string_view raw)
  {
    json j;
    try {
      j = json::parse(raw.begin(), raw.end());
    } catch (const json::parse_error& e) {
      throw ProtocolError(std::string(codes::malformed), e.what());
    }
    if (!j.is_object())
      throw ProtocolError(std::string(codes::malformed), "envelope must be a JSON object");
    only_keys(j, "envelope", {"op", "id", "target", "payload", "sla", "status"});

    Envelope e;
    auto op = op_from_string(string_field(j, "op", "envelope", true));
    if (!op)
      violated("unknown op");
    e.op = *op;
    e.id = string_field(j, "id", "envelope", false);
    e.target = string_field(j, "target", "envelope", false);
    if (auto it = j.find("payload"); it != j.end())
      e.payload = payload_from(*it);
    if (auto it = j.find("sla"); it != j.end())
      e.sla = sla_from(*it);
    if (auto it = j.find("status"); it != j.end()) {
      only_keys(*it, "status", {"code", "detail"});
      e.status = Status{string_field(*it, "code", "status", true), string_field(*it, "detail", "status", false)};
    }
    check_invariants(e);
    return e;
  }

  Envelope make_error(std::string id, std::string target, std::string_view code, std::string detail)
  {
    Envelope e;
    e.op = Op::error;
    e.id = std::move(id);
    e.target = std::move(target);
    e.status = Status{std::string(code), std::move(detail)};
    return e;
  }

} // namespace cloudroid::protocol
