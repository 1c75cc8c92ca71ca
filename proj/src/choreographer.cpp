#include <cloudroid/choreographer.hpp>
#include <cloudroid/errors.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace cloudroid {

  using nlohmann::json;

  std::string_view to_string(ServantState state)
  {
    switch (state) {
    case ServantState::instantiating:
      return "instantiating";
    case ServantState::running:
      return "running";
    case ServantState::terminating:
      return "terminating";
    case ServantState::terminated:
      return "terminated";
    }
    return "terminated";
  }

  SlaDictionary::SlaDictionary(std::vector<SlaEntry> entries) : _entries(std::move(entries))
  {
    std::set<std::pair<std::string, std::int64_t>> seen;
    for (std::size_t i = 0; i < _entries.size(); ++i) {
      const auto& e = _entries[i];
      if (!seen.emplace(e.service, e.t_desire_ms_max).second)
        throw ValidationError(fmt::format("[{}]", i),
                              fmt::format("duplicate entry for ({}, {})", e.service, e.t_desire_ms_max));
    }
  }

  SlaDictionary SlaDictionary::parse(std::string_view text)
  {
    auto j = manifest_json::parse_text(text);
    if (!j.is_array())
      throw ValidationError("$", "SLA dictionary must be an array");
    std::vector<SlaEntry> entries;
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& item = j[i];
      auto path = fmt::format("[{}]", i);
      if (!item.is_object())
        throw ValidationError(path, "expected an object");
      SlaEntry e;
      if (!item.contains("service") || !item["service"].is_string())
        throw ValidationError(path + ".service", "expected a string");
      e.service = item["service"].get<std::string>();
      if (!item.contains("t_desire_ms_max") || !item["t_desire_ms_max"].is_number_integer() ||
          item["t_desire_ms_max"].get<std::int64_t>() <= 0)
        throw ValidationError(path + ".t_desire_ms_max", "expected a positive integer");
      e.t_desire_ms_max = item["t_desire_ms_max"].get<std::int64_t>();
      if (item.contains("aux"))
        e.aux = manifest_json::scalars_from(item["aux"], path + ".aux");
      if (!item.contains("resources"))
        throw ValidationError(path + ".resources", "missing required key");
      e.resources = manifest_json::quota_from(item["resources"], path + ".resources");
      entries.push_back(std::move(e));
    }
    return SlaDictionary(std::move(entries));
  }

  NodePool::NodePool(std::vector<Node> nodes) : _nodes(std::move(nodes))
  {
    std::sort(_nodes.begin(), _nodes.end(), [](const Node& a, const Node& b) { return a.node_id < b.node_id; });
    for (std::size_t i = 1; i < _nodes.size(); ++i)
      if (_nodes[i].node_id == _nodes[i - 1].node_id)
        throw ValidationError("node_id", fmt::format("duplicate node '{}'", _nodes[i].node_id));
  }

  NodePool NodePool::parse(std::string_view text)
  {
    auto j = manifest_json::parse_text(text);
    if (!j.is_array())
      throw ValidationError("$", "node pool must be an array");
    std::vector<Node> nodes;
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& item = j[i];
      auto path = fmt::format("[{}]", i);
      if (!item.is_object() || !item.contains("node_id") || !item["node_id"].is_string())
        throw ValidationError(path + ".node_id", "expected a string");
      Node n;
      n.node_id = item["node_id"].get<std::string>();
      for (auto key : {"cpu_millicores_total", "memory_mb_total"}) {
        if (!item.contains(key) || !item[key].is_number_integer() || item[key].get<std::int64_t>() <= 0)
          throw ValidationError(path + "." + key, "expected a positive integer");
      }
      n.cpu_millicores_total = item["cpu_millicores_total"].get<std::int64_t>();
      n.memory_mb_total = item["memory_mb_total"].get<std::int64_t>();
      nodes.push_back(std::move(n));
    }
    return NodePool(std::move(nodes));
  }

  std::optional<std::string> NodePool::pick(const ResourceQuota& quota) const
  {
    const Node* best = nullptr;
    for (const auto& n : _nodes) {
      if (!n.fits(quota))
        continue;
      // nodes are sorted by id, so strict comparison keeps the smallest id on ties
      if (!best || n.memory_free() < best->memory_free())
        best = &n;
    }
    if (!best)
      return std::nullopt;
    return best->node_id;
  }

  Node& NodePool::node(const std::string& node_id)
  {
    for (auto& n : _nodes)
      if (n.node_id == node_id)
        return n;
    throw Error(fmt::format("unknown node '{}'", node_id));
  }

  const Node* NodePool::find(std::string_view node_id) const
  {
    for (const auto& n : _nodes)
      if (n.node_id == node_id)
        return &n;
    return nullptr;
  }

  void NodePool::allocate(const std::string& node_id, const std::string& servant_id, const ResourceQuota& quota)
  {
    auto& n = node(node_id);
    if (!n.fits(quota))
      throw InsufficientResources(fmt::format("node '{}' cannot hold {}m/{}MB", node_id, quota.cpu_millicores,
                                              quota.memory_mb));
    n.cpu_used += quota.cpu_millicores;
    n.memory_used += quota.memory_mb;
    n.allocated.push_back(servant_id);
  }

  void NodePool::free(const std::string& node_id, const std::string& servant_id, const ResourceQuota& quota)
  {
    auto& n = node(node_id);
    auto it = std::find(n.allocated.begin(), n.allocated.end(), servant_id);
    if (it == n.allocated.end())
      throw Error(fmt::format("servant '{}' is not allocated on '{}'", servant_id, node_id));
    n.allocated.erase(it);
    n.cpu_used -= quota.cpu_millicores;
    n.memory_used -= quota.memory_mb;
  }

  ResourceQuota resolve_resources(std::string_view service, const protocol::SlaDeclaration& sla,
                                  const SlaDictionary& dict, const ResourceQuota& fallback)
  {
    if (sla.resources)
      return *sla.resources;

    const SlaEntry* smallest_qualifying = nullptr;
    const SlaEntry* largest = nullptr;
    for (const auto& e : dict.entries()) {
      if (e.service != service)
        continue;
      if (!largest || e.t_desire_ms_max > largest->t_desire_ms_max)
        largest = &e;
      if (sla.times && e.t_desire_ms_max >= sla.times->t_desire_ms &&
          (!smallest_qualifying || e.t_desire_ms_max < smallest_qualifying->t_desire_ms_max))
        smallest_qualifying = &e;
    }
    if (smallest_qualifying)
      return smallest_qualifying->resources;
    if (largest)
      return largest->resources;
    return fallback;
  }

  std::string schedule(const ResourceQuota& quota, NodePool& pool, const std::string& servant_id)
  {
    auto node = pool.pick(quota);
    if (!node)
      throw InsufficientResources(
        fmt::format("no node has {}m CPU and {}MB memory free", quota.cpu_millicores, quota.memory_mb));
    pool.allocate(*node, servant_id, quota);
    return *node;
  }

  Choreographer::Choreographer(SlaDictionary dictionary, NodePool pool, const Scheduler* clock)
      : _dictionary(std::move(dictionary)), _pool(std::move(pool)), _clock(clock)
  {}

  void Choreographer::set_launcher(ServantLauncher* launcher)
  {
    std::lock_guard lock(_mutex);
    _launcher = launcher;
  }

  void Choreographer::register_service(const PackageManifest& manifest)
  {
    std::lock_guard lock(_mutex);
    _services.insert_or_assign(manifest.name, manifest);
  }

  bool Choreographer::has_service(std::string_view service) const
  {
    std::lock_guard lock(_mutex);
    return _services.find(service) != _services.end();
  }

  ServantRecord Choreographer::instantiate_servant(const std::string& service, const std::string& session,
                                                   const protocol::SlaDeclaration& sla)
  {
    std::lock_guard lock(_mutex);
    auto svc = _services.find(service);
    if (svc == _services.end())
      throw UnknownService(fmt::format("service '{}' is not deployed", service));
    const auto& manifest = svc->second;
    auto quota = resolve_resources(service, sla, _dictionary, manifest.default_resources);

    if (!manifest.stateful) {
      ServantRecord* shared = nullptr;
      for (auto& [id, rec] : _servants) {
        if (rec.service != service || rec.exclusive() || rec.state != ServantState::running ||
            !rec.quota.covers(quota))
          continue;
        // smallest adequate quota wins; map order breaks ties
        if (!shared || (rec.quota.memory_mb < shared->quota.memory_mb) ||
            (rec.quota.memory_mb == shared->quota.memory_mb &&
             rec.quota.cpu_millicores < shared->quota.cpu_millicores))
          shared = &rec;
      }
      if (shared) {
        shared->subscribers.insert(session);
        return *shared;
      }
    }

    auto id = fmt::format("{}-{}", service, ++_counters[service]);
    ServantRecord rec;
    rec.servant_id = id;
    rec.service = service;
    rec.owner_session = manifest.stateful ? session : std::string{};
    rec.quota = quota;
    rec.node_id = schedule(quota, _pool, id);
    rec.state = ServantState::instantiating;
    rec.subscribers.insert(session);
    rec.created_at_ms = _clock ? _clock->now_ms() : 0;

    if (_launcher) {
      try {
        _launcher->start(rec, manifest);
      } catch (...) {
        _pool.free(rec.node_id, id, quota);
        throw;
      }
    }
    rec.state = ServantState::running;
    return _servants.emplace(id, std::move(rec)).first->second;
  }

  void Choreographer::terminate_locked(std::map<std::string, ServantRecord>::iterator it)
  {
    auto& rec = it->second;
    rec.state = ServantState::terminating;
    if (_launcher)
      _launcher->stop(rec.servant_id);
    rec.state = ServantState::terminated;
    _pool.free(rec.node_id, rec.servant_id, rec.quota);
    _servants.erase(it);
  }

  void Choreographer::release_servant(const std::string& servant_id)
  {
    std::lock_guard lock(_mutex);
    auto it = _servants.find(servant_id);
    if (it == _servants.end())
      throw UnknownServant(fmt::format("no servant '{}'", servant_id));
    terminate_locked(it);
  }

  bool Choreographer::detach(const std::string& servant_id, const std::string& session)
  {
    std::lock_guard lock(_mutex);
    auto it = _servants.find(servant_id);
    if (it == _servants.end())
      throw UnknownServant(fmt::format("no servant '{}'", servant_id));
    it->second.subscribers.erase(session);
    if (!it->second.subscribers.empty())
      return false;
    terminate_locked(it);
    return true;
  }

  std::optional<ServantRecord> Choreographer::servant(std::string_view servant_id) const
  {
    std::lock_guard lock(_mutex);
    auto it = _servants.find(std::string(servant_id));
    if (it == _servants.end())
      return std::nullopt;
    return it->second;
  }

  std::vector<ServantRecord> Choreographer::servants() const
  {
    std::lock_guard lock(_mutex);
    std::vector<ServantRecord> out;
    for (const auto& [_, rec] : _servants)
      out.push_back(rec);
    return out;
  }

  NodePool Choreographer::pool() const
  {
    std::lock_guard lock(_mutex);
    return _pool;
  }

} // namespace cloudroid
