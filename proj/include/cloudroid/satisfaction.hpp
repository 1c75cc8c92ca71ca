#ifndef CLOUDROID_SATISFACTION_HPP
#define CLOUDROID_SATISFACTION_HPP

#include <cstdint>
#include <string_view>

namespace cloudroid {

  enum class LocalAction { none, start_local, stop_local };
  std::string_view to_string(LocalAction a);

  // Satisfaction value q with the hysteresis threshold around which the local
  // copy is started and stopped.
  struct SatisfactionState {
    double q = 10;
    std::int64_t q_threshold = 10;
    std::int64_t t_desire_ms = 0;
    std::int64_t t_max_ms = 0;
    bool local_running = false;
    double q_cap = 40;

    // q = q_threshold, q_cap = 4 * q_threshold, local copy not running.
    static SatisfactionState initial(std::int64_t q_threshold, std::int64_t t_desire_ms, std::int64_t t_max_ms);

    // Throws ValidationError when an invariant does not hold.
    void validate() const;

    // Completion time charged for a request unanswered at 2 * t_max.
    double timeout_marker_ms() const { return 2.0 * static_cast<double>(t_max_ms); }

    bool operator==(const SatisfactionState&) const = default;
  };

  struct SatisfactionUpdate {
    SatisfactionState state; // local_running already reflects the action
    LocalAction action = LocalAction::none;
  };

  // One step of the local restart policy for a measured remote completion time.
  SatisfactionUpdate update_satisfaction(const SatisfactionState& s, double t_current_ms);

  enum class LinkStatus { up, down };

  enum class StubMode {
    normal,     // remote service in use, local copy races when enabled
    local_only, // link down, every request served by the local copy
    down,       // link down and no local copy available
    regranting, // link back, waiting for a fresh grant before routing
  };
  std::string_view to_string(StubMode m);

  enum class FailoverAction { none, enter_local_only, service_down, resume_racing, rerequest_service };
  std::string_view to_string(FailoverAction a);

  struct FailoverContext {
    StubMode mode = StubMode::normal;
    bool has_fallback = false;
    bool stateful = false;
  };

  // Reaction to a keepalive verdict. Pure; the stub applies the action.
  FailoverAction failover_tick(const FailoverContext& ctx, LinkStatus link);

} // namespace cloudroid

#endif
