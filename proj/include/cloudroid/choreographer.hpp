#ifndef CLOUDROID_CHOREOGRAPHER_HPP
#define CLOUDROID_CHOREOGRAPHER_HPP

#include <cloudroid/manifest.hpp>
#include <cloudroid/protocol.hpp>
#include <cloudroid/scheduler.hpp>

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cloudroid {

  enum class ServantState { instantiating, running, terminating, terminated };

  std::string_view to_string(ServantState state);

  struct ServantRecord {
    std::string servant_id;
    std::string service;
    // Empty for shared (stateless) servants.
    std::string owner_session;
    ResourceQuota quota;
    std::string node_id;
    ServantState state = ServantState::instantiating;
    // Sessions currently granted this servant.
    std::set<std::string> subscribers;
    double created_at_ms = 0;

    bool exclusive() const { return !owner_session.empty(); }
  };

  struct SlaEntry {
    std::string service;
    std::int64_t t_desire_ms_max = 0;
    ScalarMap aux; // carried, never interpreted
    ResourceQuota resources;
  };

  // Maps (service, SLA value) to a resource configuration. Loaded once and
  // immutable afterwards.
  class SlaDictionary {
  public:
    SlaDictionary() = default;
    // Throws ValidationError on duplicate (service, t_desire_ms_max).
    explicit SlaDictionary(std::vector<SlaEntry> entries);

    // JSON array of {service, t_desire_ms_max, aux, resources}.
    static SlaDictionary parse(std::string_view text);

    const std::vector<SlaEntry>& entries() const { return _entries; }

  private:
    std::vector<SlaEntry> _entries;
  };

  struct Node {
    std::string node_id;
    std::int64_t cpu_millicores_total = 0;
    std::int64_t memory_mb_total = 0;
    std::int64_t cpu_used = 0;
    std::int64_t memory_used = 0;
    std::vector<std::string> allocated;

    std::int64_t cpu_free() const { return cpu_millicores_total - cpu_used; }
    std::int64_t memory_free() const { return memory_mb_total - memory_used; }
    bool fits(const ResourceQuota& q) const { return cpu_free() >= q.cpu_millicores && memory_free() >= q.memory_mb; }
  };

  class NodePool {
  public:
    NodePool() = default;
    // Nodes are kept sorted by node_id. Throws ValidationError on duplicates.
    explicit NodePool(std::vector<Node> nodes);

    // JSON array of {node_id, cpu_millicores_total, memory_mb_total}.
    static NodePool parse(std::string_view text);

    // Best fit on memory, ties to the smallest node_id. No mutation.
    std::optional<std::string> pick(const ResourceQuota& quota) const;

    void allocate(const std::string& node_id, const std::string& servant_id, const ResourceQuota& quota);
    void free(const std::string& node_id, const std::string& servant_id, const ResourceQuota& quota);

    const std::vector<Node>& nodes() const { return _nodes; }
    const Node* find(std::string_view node_id) const;

  private:
    Node& node(const std::string& node_id);

    std::vector<Node> _nodes;
  };

  // Explicit resources pass through; otherwise the entry for `service` with the
  // smallest t_desire_ms_max >= t_desire, else the one with the largest
  // t_desire_ms_max, else `fallback`.
  ResourceQuota resolve_resources(std::string_view service, const protocol::SlaDeclaration& sla,
                                  const SlaDictionary& dict, const ResourceQuota& fallback);

  // Picks a node and records the allocation. Throws InsufficientResources,
  // leaving the pool untouched.
  std::string schedule(const ResourceQuota& quota, NodePool& pool, const std::string& servant_id);

  // Hook through which the choreographer starts and stops sandboxes.
  class ServantLauncher {
  public:
    virtual ~ServantLauncher() = default;
    // Throws WorkloadLaunchError if the sandbox does not come up.
    virtual void start(const ServantRecord& record, const PackageManifest& manifest) = 0;
    virtual void stop(const std::string& servant_id) = 0;
  };

  // Single authority over servant lifecycle and node-pool accounting. All
  // mutations serialize on one mutex.
  class Choreographer {
  public:
    Choreographer(SlaDictionary dictionary, NodePool pool, const Scheduler* clock = nullptr);

    void set_launcher(ServantLauncher* launcher);

    // Makes `manifest.name` instantiable; replaces an earlier registration.
    void register_service(const PackageManifest& manifest);
    bool has_service(std::string_view service) const;

    // Stateless services reuse a running shared servant whose quota covers the
    // resolved quota; stateful services always get a fresh exclusive servant.
    // Throws UnknownService, InsufficientResources, WorkloadLaunchError.
    ServantRecord instantiate_servant(const std::string& service, const std::string& session,
                                      const protocol::SlaDeclaration& sla);

    // Terminates regardless of subscribers. Throws UnknownServant.
    void release_servant(const std::string& servant_id);

    // Removes `session` from the servant's subscribers and terminates it once
    // none remain. Returns true if the servant terminated. Throws UnknownServant.
    bool detach(const std::string& servant_id, const std::string& session);

    std::optional<ServantRecord> servant(std::string_view servant_id) const;
    std::vector<ServantRecord> servants() const;
    NodePool pool() const;
    const SlaDictionary& dictionary() const { return _dictionary; }

  private:
    void terminate_locked(std::map<std::string, ServantRecord>::iterator it);

    mutable std::mutex _mutex;
    SlaDictionary _dictionary;
    NodePool _pool;
    const Scheduler* _clock;
    ServantLauncher* _launcher = nullptr;
    std::map<std::string, PackageManifest, std::less<>> _services;
    std::map<std::string, ServantRecord> _servants;
    std::map<std::string, std::uint64_t> _counters;
  };

} // namespace cloudroid

#endif
