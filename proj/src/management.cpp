#include <cloudroid/errors.hpp>
#include <cloudroid/portal.hpp>

#include <nlohmann/json.hpp>

namespace cloudroid {

  using nlohmann::json;

  namespace {

    RestResponse reply(int status, const json& body) { return {status, body.dump()}; }

    RestResponse failure(int status, const std::string& message, const std::string& path = {})
    {
      json body = {{"error", message}};
      if (!path.empty())
        body["path"] = path;
      return reply(status, body);
    }

    json summary(const ServiceCatalogEntry& e)
    {
      return {{"service", e.service},
              {"version", e.manifest.version},
              {"stateful", e.manifest.stateful},
              {"deployed_at_ms", e.deployed_at_ms}};
    }

    json servant_json(const ServantRecord& r)
    {
      return {{"servant_id", r.servant_id},
              {"service", r.service},
              {"owner_session", r.owner_session},
              {"quota", manifest_json::to_json(r.quota)},
              {"node_id", r.node_id},
              {"state", to_string(r.state)},
              {"subscribers", r.subscribers},
              {"created_at_ms", r.created_at_ms}};
    }

    bool query_flag(std::string_view query, std::string_view key)
    {
      while (!query.empty()) {
        auto amp = query.find('&');
        auto part = query.substr(0, amp);
        if (part == key || part == std::string(key) + "=true" || part == std::string(key) + "=1")
          return true;
        if (amp == std::string_view::npos)
          break;
        query.remove_prefix(amp + 1);
      }
      return false;
    }

  } // namespace

  RestResponse management_api(ServicePortal& portal, const RestRequest& request)
  {
    std::string_view target = request.target;
    std::string_view query;
    if (auto q = target.find('?'); q != std::string_view::npos) {
      query = target.substr(q + 1);
      target = target.substr(0, q);
    }
    while (target.size() > 1 && target.back() == '/')
      target.remove_suffix(1);

    auto under = [&](std::string_view prefix, std::string& rest) {
      if (!target.starts_with(prefix) || target.size() == prefix.size())
        return false;
      rest = std::string(target.substr(prefix.size()));
      return rest.find('/') == std::string::npos;
    };
    const auto& method = request.method;
    std::string name;

    if (target == "/packages") {
      if (method != "POST")
        return failure(405, "use POST");
      try {
        auto result = portal.deploy_package(request.body, query_flag(query, "replace"));
        return reply(result.created ? 201 : 200, summary(result.entry));
      } catch (const SyntaxError& e) {
        return failure(400, e.what());
      } catch (const ValidationError& e) {
        return failure(422, e.what(), e.path);
      } catch (const ConflictError& e) {
        return failure(409, e.what());
      }
    }

    if (target == "/services") {
      if (method != "GET")
        return failure(405, "use GET");
      json out = json::array();
      for (const auto& e : portal.services())
        out.push_back(summary(e));
      return reply(200, out);
    }

    if (under("/services/", name)) {
      if (method != "GET")
        return failure(405, "use GET");
      auto entry = portal.service(name);
      if (!entry)
        return failure(404, "unknown service '" + name + "'");
      auto body = summary(*entry);
      body["manifest"] = json::parse(entry->manifest_bytes);
      return reply(200, body);
    }

    if (target == "/servants") {
      if (method != "GET")
        return failure(405, "use GET");
      json out = json::array();
      for (const auto& r : portal.servants())
        out.push_back(servant_json(r));
      return reply(200, out);
    }

    if (under("/servants/", name)) {
      if (method == "GET") {
        auto rec = portal.choreographer().servant(name);
        if (!rec)
          return failure(404, "unknown servant '" + name + "'");
        return reply(200, servant_json(*rec));
      }
      if (method != "DELETE")
        return failure(405, "use GET or DELETE");
      try {
        portal.delete_servant(name);
      } catch (const UnknownServant& e) {
        return failure(404, e.what());
      }
      return {204, ""};
    }

    if (under("/stubs/", name)) {
      if (method != "GET")
        return failure(405, "use GET");
      auto bytes = portal.stub_bytes(name);
      if (!bytes)
        return failure(404, "no stub for '" + name + "'");
      return {200, *bytes};
    }

    if (target == "/metrics") {
      if (method != "GET")
        return failure(405, "use GET");
      return reply(200, portal.metrics());
    }

    return failure(404, "no route for " + std::string(target));
  }

} // namespace cloudroid
