#include <doctest.h>

#include "support/oracles.hpp"

#include <cloudroid/errors.hpp>
#include <cloudroid/satisfaction.hpp>

#include <random>

using namespace cloudroid;

namespace {

  SatisfactionState state(double q, bool running = false, double cap = 40)
  {
    SatisfactionState s = SatisfactionState::initial(10, 100, 300);
    s.q = q;
    s.local_running = running;
    s.q_cap = cap;
    return s;
  }

  int code(LocalAction a) { return a == LocalAction::start_local ? 1 : a == LocalAction::stop_local ? 2 : 0; }

} // namespace

TEST_CASE("initial state sits at the threshold")
{
  auto s = SatisfactionState::initial(10, 100, 300);
  CHECK(s.q == 10);
  CHECK(s.q_cap == 40);
  CHECK_FALSE(s.local_running);
  CHECK(s.timeout_marker_ms() == 600);
  CHECK_THROWS_AS(SatisfactionState::initial(10, 300, 100), ValidationError);
  CHECK_THROWS_AS(SatisfactionState::initial(0, 100, 300), ValidationError);
  CHECK_THROWS_AS(SatisfactionState::initial(10, 0, 300), ValidationError);
}

TEST_CASE("single-step examples")
{
  auto u = update_satisfaction(state(10), 80);
  CHECK(u.state.q == 12);
  CHECK(u.action == LocalAction::none);

  u = update_satisfaction(state(16), 400);
  CHECK(u.state.q == 8);
  CHECK(u.action == LocalAction::start_local);
  CHECK(u.state.local_running);

  u = update_satisfaction(state(9, true), 90);
  CHECK(u.state.q == 11);
  CHECK(u.action == LocalAction::stop_local);
  CHECK_FALSE(u.state.local_running);

  // boundaries: t == t_desire is +2, t == t_max is +1
  CHECK(update_satisfaction(state(10), 100).state.q == 12);
  CHECK(update_satisfaction(state(10), 300).state.q == 11);
  CHECK(update_satisfaction(state(10), 300.001).state.q == 5);
  CHECK(update_satisfaction(state(39.5), 10).state.q == 40);
}

TEST_CASE("hand trace from the neutral point")
{
  auto s = state(10, false, 1e9);
  std::vector<double> qs;
  std::vector<LocalAction> actions;
  for (double t : {400, 400, 90, 90, 90, 90}) {
    auto u = update_satisfaction(s, t);
    qs.push_back(u.state.q);
    actions.push_back(u.action);
    s = u.state;
  }
  CHECK(qs == std::vector<double>{5, 2.5, 4.5, 6.5, 8.5, 10.5});
  CHECK(actions == std::vector<LocalAction>{LocalAction::start_local, LocalAction::none, LocalAction::none,
                                            LocalAction::none, LocalAction::none, LocalAction::stop_local});
}

TEST_CASE("no action at exactly the threshold")
{
  // 20 halves to 10 with the copy not running; 8 climbs to 10 with it running
  CHECK(update_satisfaction(state(20), 1000).action == LocalAction::none);
  CHECK(update_satisfaction(state(8, true), 50).action == LocalAction::none);
  CHECK(update_satisfaction(state(9, true), 200).action == LocalAction::none);
}

TEST_CASE("saturated q reaches start_local within three violations")
{
  auto s = state(40);
  int steps = 0;
  LocalAction a = LocalAction::none;
  while (a == LocalAction::none) {
    auto u = update_satisfaction(s, 600);
    s = u.state;
    a = u.action;
    ++steps;
  }
  CHECK(steps == 3);
  CHECK(a == LocalAction::start_local);
}

TEST_CASE("matches the reference interpreter on random traces")
{
  std::mt19937 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::int64_t q_t = 1 + rng() % 20, td = 1 + rng() % 300, tm = td + rng() % 300;
    auto s = SatisfactionState::initial(q_t, td, tm);
    std::uniform_real_distribution<double> t_dist(0, 4.0 * tm);
    std::vector<double> trace(rng() % 200);
    for (auto& t : trace)
      t = rng() % 4 == 0 ? static_cast<double>(rng() % 3 == 0 ? td : tm) : t_dist(rng);
    auto expected = oracle::local_restart_policy(s.q, double(q_t), double(td), double(tm), s.q_cap, trace);
    for (std::size_t i = 0; i < trace.size(); ++i) {
      auto u = update_satisfaction(s, trace[i]);
      REQUIRE(u.state.q == expected[i].q);
      REQUIRE(code(u.action) == expected[i].action);
      s = u.state;
    }
  }
}

TEST_CASE("monotone response regions and bounds")
{
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> q_dist(0, 40);
  for (int i = 0; i < 2000; ++i) {
    auto s = state(q_dist(rng), rng() % 2 == 0);
    double good = static_cast<double>(rng() % 101);
    double bad = 300.5 + static_cast<double>(rng() % 1000);
    auto up = update_satisfaction(s, good).state.q;
    auto down = update_satisfaction(s, bad).state.q;
    CHECK(up >= s.q);
    CHECK(down <= s.q);
    CHECK(up <= s.q_cap);
    CHECK(down >= 0);
  }
}

TEST_CASE("failover decisions")
{
  using enum StubMode;
  auto tick = [](StubMode m, bool fallback, bool stateful, LinkStatus l) {
    return failover_tick({m, fallback, stateful}, l);
  };
  CHECK(tick(normal, true, false, LinkStatus::down) == FailoverAction::enter_local_only);
  CHECK(tick(normal, true, true, LinkStatus::down) == FailoverAction::enter_local_only);
  CHECK(tick(normal, false, false, LinkStatus::down) == FailoverAction::service_down);
  CHECK(tick(regranting, true, true, LinkStatus::down) == FailoverAction::enter_local_only);
  CHECK(tick(local_only, true, false, LinkStatus::up) == FailoverAction::resume_racing);
  CHECK(tick(local_only, true, true, LinkStatus::up) == FailoverAction::rerequest_service);
  CHECK(tick(down, false, false, LinkStatus::up) == FailoverAction::resume_racing);
  CHECK(tick(down, false, true, LinkStatus::up) == FailoverAction::rerequest_service);
  CHECK(tick(normal, true, false, LinkStatus::up) == FailoverAction::none);
  CHECK(tick(local_only, true, false, LinkStatus::down) == FailoverAction::none);
  CHECK(tick(down, false, false, LinkStatus::down) == FailoverAction::none);
  CHECK(tick(regranting, true, true, LinkStatus::up) == FailoverAction::none);
}

TEST_CASE("names")
{
  CHECK(to_string(LocalAction::start_local) == "start_local");
  CHECK(to_string(LocalAction::stop_local) == "stop_local");
  CHECK(to_string(LocalAction::none).empty());
  CHECK(to_string(StubMode::local_only) == "local_only");
}
