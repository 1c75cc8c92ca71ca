#include <cloudroid/errors.hpp>
#include <cloudroid/satisfaction.hpp>

#include <algorithm>

namespace cloudroid {

  std::string_view to_string(LocalAction a)
  {
    switch (a) {
    case LocalAction::none: return "";
    case LocalAction::start_local: return "start_local";
    case LocalAction::stop_local: return "stop_local";
    }
    return "";
  }

  std::string_view to_string(StubMode m)
  {
    switch (m) {
    case StubMode::normal: return "normal";
    case StubMode::local_only: return "local_only";
    case StubMode::down: return "down";
    case StubMode::regranting: return "regranting";
    }
    return "normal";
  }

  std::string_view to_string(FailoverAction a)
  {
    switch (a) {
    case FailoverAction::none: return "none";
    case FailoverAction::enter_local_only: return "enter_local_only";
    case FailoverAction::service_down: return "service_down";
    case FailoverAction::resume_racing: return "resume_racing";
    case FailoverAction::rerequest_service: return "rerequest_service";
    }
    return "none";
  }

  SatisfactionState SatisfactionState::initial(std::int64_t q_threshold, std::int64_t t_desire_ms, std::int64_t t_max_ms)
  {
    SatisfactionState s;
    s.q_threshold = q_threshold;
    s.q = static_cast<double>(q_threshold);
    s.q_cap = 4.0 * static_cast<double>(q_threshold);
    s.t_desire_ms = t_desire_ms;
    s.t_max_ms = t_max_ms;
    s.validate();
    return s;
  }

  void SatisfactionState::validate() const
  {
    if (q_threshold <= 0)
      throw ValidationError("q_threshold", "must be positive");
    if (t_desire_ms <= 0 || t_max_ms <= 0)
      throw ValidationError("t_desire_ms", "SLA times must be positive");
    if (t_desire_ms > t_max_ms)
      throw ValidationError("t_desire_ms", "must not exceed t_max_ms");
    if (!(q >= 0 && q <= q_cap))
      throw ValidationError("q", "must lie in [0, q_cap]");
  }

  SatisfactionUpdate update_satisfaction(const SatisfactionState& s, double t)
  {
    SatisfactionUpdate out{s, LocalAction::none};
    auto& q = out.state.q;
    if (t <= static_cast<double>(s.t_desire_ms))
      q = std::min(s.q_cap, s.q + 2);
    else if (t <= static_cast<double>(s.t_max_ms))
      q = std::min(s.q_cap, s.q + 1);
    else
      q = s.q / 2;

    auto threshold = static_cast<double>(s.q_threshold);
    if (q < threshold && !s.local_running) {
      out.action = LocalAction::start_local;
      out.state.local_running = true;
    } else if (q > threshold && s.local_running) {
      out.action = LocalAction::stop_local;
      out.state.local_running = false;
    }
    return out;
  }

  FailoverAction failover_tick(const FailoverContext& ctx, LinkStatus link)
  {
    if (link == LinkStatus::down) {
      if (ctx.mode != StubMode::normal && ctx.mode != StubMode::regranting)
        return FailoverAction::none;
      return ctx.has_fallback ? FailoverAction::enter_local_only : FailoverAction::service_down;
    }
    if (ctx.mode != StubMode::local_only && ctx.mode != StubMode::down)
      return FailoverAction::none;
    return ctx.stateful ? FailoverAction::rerequest_service : FailoverAction::resume_racing;
  }

} // namespace cloudroid
