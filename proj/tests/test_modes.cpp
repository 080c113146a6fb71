#include <doctest.h>

#include "abv/modes.hpp"

using namespace abv;

namespace {

// Rule list written straight from the transition table, evaluated per cell
// with no pending take-over request.
Mode oracle(Mode mode, double v, bool secured, bool healthy, DriverAction action, bool ready) {
  const bool full_ok = healthy && secured && v <= 13.89;
  if (mode == Mode::Emergency) return (action == DriverAction::ResetEmergency && v == 0.0) ? Mode::Driver : mode;
  if (!healthy && mode != Mode::Driver) return Mode::Emergency;
  if (mode != Mode::Driver && (action == DriverAction::Disengage || action == DriverAction::Override))
    return Mode::Driver;
  if (mode == Mode::FullSystem && !full_ok) {
    const bool acting = action == DriverAction::Acknowledge || action == DriverAction::Override;
    return (ready && acting) ? Mode::Driver : Mode::Emergency;
  }
  if (action == DriverAction::EngageLongiAdas && healthy) return Mode::LongiAdas;
  if (action == DriverAction::EngageFullSystem && full_ok) return Mode::FullSystem;
  return mode;
}

ArbiterInput base_input(double v, bool secured, bool healthy = true) {
  ArbiterInput in;
  in.health = SystemHealth{healthy, true};
  in.available = available_modes(v, secured, in.health);
  in.v = v;
  in.secured = secured;
  in.speed_ok = v <= 13.89;
  return in;
}

}  // namespace

TEST_CASE("available modes") {
  SystemHealth ok;
  CHECK(available_modes(8.33, true, ok) == ModeSet{Mode::Driver, Mode::LongiAdas, Mode::FullSystem, Mode::Emergency});
  CHECK(available_modes(19.4, true, ok) == ModeSet{Mode::Driver, Mode::LongiAdas, Mode::Emergency});
  CHECK(available_modes(8.33, false, ok) == ModeSet{Mode::Driver, Mode::LongiAdas, Mode::Emergency});
  CHECK(available_modes(8.33, true, SystemHealth{false, true}) == ModeSet{Mode::Driver, Mode::Emergency});
}

TEST_CASE("driver monitoring window") {
  std::vector<TimedInput> history;
  for (int i = 0; i <= 100; ++i) history.push_back({i * 0.02, DriverInput{}});
  CHECK_FALSE(monitor_driver(history, 2.0).ready);

  DriverInput ack;
  ack.acknowledge = true;
  history[50].input = ack;
  auto r = monitor_driver(history, 2.0);
  CHECK(r.ready);
  CHECK(r.last_activity_age == doctest::Approx(1.0));

  std::vector<TimedInput> boundary{{0.0, DriverInput{0.3}}};
  CHECK_FALSE(monitor_driver(boundary, 0.5).ready);
  boundary[0].input.steer_torque = 0.31;
  CHECK(monitor_driver(boundary, 0.5).ready);
}

TEST_CASE("speed guard hysteresis and dwell") {
  SpeedGuard guard;
  CHECK(guard.update(14.2, 0.02));
  CHECK_FALSE(guard.update(14.5, 0.02));
  guard.update(13.0, 0.02);
  for (int i = 0; i < 49; ++i) guard.update(14.0, 0.02);
  CHECK_FALSE(guard.excess_sustained());
  guard.update(14.0, 0.02);
  guard.update(14.0, 0.02);
  CHECK(guard.excess_sustained());
  guard.update(13.0, 0.02);
  CHECK_FALSE(guard.excess_sustained());
}

TEST_CASE("truth table matches the rule-list oracle") {
  auto rows = dump_truth_table();
  CHECK(rows.size() == 4u * 3u * 2u * 2u * 7u * 2u);
  int mismatches = 0;
  for (const auto& r : rows) {
    const Mode expected = oracle(r.mode, r.speed.v, r.secured, r.healthy, r.action, r.ready);
    if (expected != r.result) ++mismatches;
    CHECK_FALSE((r.result == Mode::FullSystem && (!r.secured || r.speed.v > 13.89)));
    CHECK((r.available.contains(r.result) || r.result == Mode::Emergency || r.result == Mode::Driver));
  }
  CHECK(mismatches == 0);
  CHECK(dump_truth_table().size() == rows.size());
  CHECK(truth_table_csv(rows) == truth_table_csv(dump_truth_table()));
}

TEST_CASE("refused engagement keeps the mode and names the reason") {
  auto in = base_input(19.4, true);
  in.driver.engage_request = Mode::FullSystem;
  auto out = step_arbiter(Mode::Driver, std::nullopt, in);
  CHECK(out.mode == Mode::Driver);
  CHECK(out.refusal == Refusal::SpeedTooHigh);
  CHECK(to_string(out.refusal) == "speed_above_50kmh");

  in = base_input(8.0, false);
  in.driver.engage_request = Mode::FullSystem;
  out = step_arbiter(Mode::LongiAdas, std::nullopt, in);
  CHECK(out.mode == Mode::LongiAdas);
  CHECK(out.refusal == Refusal::NotSecured);
}

TEST_CASE("take-over request: inert driver ends in Emergency") {
  ArbiterParams params;
  std::optional<TakeOverRequest> tor;
  Mode mode = Mode::FullSystem;
  double t = 0.0;
  auto in = base_input(10.0, true);
  in.handover_reason = TorReason::SecuredRoadEnding;
  in.t = t;
  auto out = step_arbiter(mode, tor, in, params);
  REQUIRE(out.tor);
  CHECK(out.tor->deadline == doctest::Approx(10.0));
  CHECK(out.mode == Mode::FullSystem);
  mode = out.mode;
  tor = out.tor;
  while (mode == Mode::FullSystem && t < 20.0) {
    t += 0.02;
    in = base_input(10.0, true);
    in.t = t;
    out = step_arbiter(mode, tor, in, params);
    mode = out.mode;
    tor = out.tor;
  }
  CHECK(mode == Mode::Emergency);
  REQUIRE(tor);
  CHECK(tor->state == TorState::Expired);
  CHECK(t > 10.0);
  CHECK(t < 10.05);
}

TEST_CASE("take-over request: driver acknowledges and grips the wheel") {
  std::optional<TakeOverRequest> tor = TakeOverRequest{0.0, 10.0, TorReason::SecuredRoadEnding, TorState::Pending};
  auto in = base_input(10.0, true);
  in.t = 3.0;
  in.driver.acknowledge = true;
  in.driver.steer_torque = 1.0;
  in.readiness = DriverReadiness{true, 0.0};
  auto out = step_arbiter(Mode::FullSystem, tor, in);
  CHECK(out.mode == Mode::Driver);
  REQUIRE(out.tor);
  CHECK(out.tor->state == TorState::Acknowledged);
  // The resolved request is dropped on the next step.
  auto next = step_arbiter(out.mode, out.tor, base_input(10.0, true));
  CHECK_FALSE(next.tor);
}

TEST_CASE("disengage from LongiAdas and emergency absorption") {
  auto in = base_input(10.0, true);
  in.driver.disengage_request = true;
  CHECK(step_arbiter(Mode::LongiAdas, std::nullopt, in).mode == Mode::Driver);

  in = base_input(3.0, true);
  in.driver.reset_emergency = true;
  CHECK(step_arbiter(Mode::Emergency, std::nullopt, in).mode == Mode::Emergency);
  in.v = 0.0;
  CHECK(step_arbiter(Mode::Emergency, std::nullopt, in).mode == Mode::Driver);

  in = base_input(0.0, true);
  in.driver.engage_request = Mode::FullSystem;
  auto out = step_arbiter(Mode::Emergency, std::nullopt, in);
  CHECK(out.mode == Mode::Emergency);
  CHECK(out.refusal == Refusal::EmergencyActive);
}

TEST_CASE("health fault beats override") {
  auto in = base_input(10.0, true, false);
  in.steering_override = true;
  CHECK(step_arbiter(Mode::FullSystem, std::nullopt, in).mode == Mode::Emergency);
  CHECK(step_arbiter(Mode::Driver, std::nullopt, in).mode == Mode::Driver);
}

TEST_CASE("pending request resolves to exactly one final state") {
  for (bool driver_acts : {false, true}) {
    std::optional<TakeOverRequest> tor = TakeOverRequest{0.0, 10.0, TorReason::SupervisorOrder, TorState::Pending};
    Mode mode = Mode::FullSystem;
    int resolutions = 0;
    for (int k = 1; k < 700 && tor; ++k) {
      auto in = base_input(9.0, true);
      in.t = k * 0.02;
      if (driver_acts && in.t > 4.0) {
        in.driver.steer_torque = 1.0;
        in.readiness = DriverReadiness{true, 0.0};
      }
      auto out = step_arbiter(mode, tor, in);
      if (out.tor && out.tor->state != TorState::Pending) ++resolutions;
      mode = out.mode;
      tor = out.tor;
      if (tor && tor->state != TorState::Pending) {
        CHECK(tor->state == (driver_acts ? TorState::Acknowledged : TorState::Expired));
        CHECK(mode == (driver_acts ? Mode::Driver : Mode::Emergency));
        break;
      }
    }
    CHECK(resolutions == 1);
  }
}
