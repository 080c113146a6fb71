#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "abv/simulation.hpp"

using namespace abv;

namespace {

Scenario load(const std::string& name) { return load_scenario(std::string(ABV_SCENARIO_DIR) + "/" + name); }

struct Trace {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    FAIL("no column " << name);
    return 0;
  }
  double num(std::size_t row, const std::string& name) const { return std::stod(rows[row][col(name)]); }
  const std::string& str(std::size_t row, const std::string& name) const { return rows[row][col(name)]; }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

Trace parse(const std::string& csv) {
  Trace t;
  std::stringstream in(csv);
  std::string line;
  std::getline(in, line);
  t.columns = split(line);
  while (std::getline(in, line)) t.rows.push_back(split(line));
  return t;
}

std::pair<Metrics, std::string> traced(const Scenario& sc) {
  std::ostringstream out;
  auto m = run(sc, RunOptions{std::nullopt, std::nullopt, &out});
  return {m, out.str()};
}

}  // namespace

TEST_CASE("10 s at 0.02 s is 500 steps and 500 trace rows") {
  auto sc = load("override_pulse.json");
  auto [m, csv] = traced(sc);
  CHECK(m.steps == 500);
  auto trace = parse(csv);
  CHECK(trace.columns == split(Simulation::trace_header().substr(0, Simulation::trace_header().size() - 1)));
  REQUIRE(trace.rows.size() == 500);
  CHECK(trace.str(0, "step") == "1");
  CHECK(trace.str(499, "t") == "10.00");
}

TEST_CASE("equal seeds give byte-identical traces; a different seed does not") {
  for (const char* name : {"s1_obstacle.json", "s2_tor_emergency_lane.json"}) {
    auto sc = load(name);
    const auto a = traced(sc).second;
    const auto b = traced(sc).second;
    CHECK(a == b);
    sc.seed += 1;
    CHECK(traced(sc).second != a);
  }
}

TEST_CASE("S1: stop within sensing range") {
  auto sc = load("s1_obstacle.json");
  Simulation sim(sc);
  // The obstacle appears exactly 40 m ahead of the ego's reference point.
  double ego_s = 0.0;
  while (sim.obstacles().empty()) {
    ego_s = sim.ego()->state.s;
    sim.step();
  }
  CHECK(sim.obstacles().front().s - ego_s == doctest::Approx(40.0).epsilon(1e-9));
  while (!sim.finished()) sim.step();
  const auto m = sim.metrics();

  // Closed-form stopping distance at -4 m/s^2 with 0.3 s latency.
  const double v = 13.89;
  const double braking = v * 0.3 + v * v / (2.0 * 4.0);
  CHECK(braking == doctest::Approx(28.28).epsilon(1e-3));
  CHECK(braking < 39.0);

  REQUIRE(m.ego);
  CHECK(m.ego->state.v == 0.0);
  CHECK(m.ego->front_gap >= 1.0);
  CHECK(m.ego->driver_activity == 0.0);
  CHECK(m.collisions == 0);
  CHECK(m.invariant_violations == 0);
  CHECK(m.max_assist_torque <= 3.0);
}

TEST_CASE("S2: unanswered TOR ends in Emergency on the emergency lane") {
  auto sc = load("s2_tor_emergency_lane.json");
  std::ostringstream out;
  auto m = run(sc, RunOptions{std::nullopt, std::nullopt, &out});
  auto trace = parse(out.str());
  REQUIRE(m.ego);
  const auto& e = *m.ego;
  REQUIRE(e.tor_issued_at);
  REQUIRE(e.tor_resolved_at);
  CHECK(e.tor_outcome == TorState::Expired);
  CHECK(*e.tor_resolved_at - *e.tor_issued_at == doctest::Approx(10.0).epsilon(0.03 / 10.0));

  // Issued while still on the secured segment; a step starting at t is logged in row t / dt.
  const auto issue_row = static_cast<std::size_t>(std::lround(*e.tor_issued_at / 0.02));
  CHECK(trace.num(issue_row, "ego_s") < 300.0);
  CHECK(trace.str(issue_row, "tor_state") == "pending");

  CHECK(e.mode == Mode::Emergency);
  CHECK(e.entered_emergency);
  CHECK(e.state.v == 0.0);
  CHECK(std::abs(e.state.d - (-3.5)) < 0.3);
  CHECK(m.collisions == 0);
  CHECK(m.invariant_violations == 0);
}

TEST_CASE("S2 without an emergency lane stops in lane") {
  auto m = run(load("s2_tor_in_lane.json"));
  REQUIRE(m.ego);
  CHECK(m.ego->mode == Mode::Emergency);
  CHECK(m.ego->tor_outcome == TorState::Expired);
  CHECK(m.ego->state.v == 0.0);
  CHECK(std::abs(m.ego->state.d) < 0.3);
  CHECK(m.invariant_violations == 0);
}

TEST_CASE("S2 with an attentive driver hands over without Emergency") {
  auto m = run(load("s2_tor_attentive.json"));
  REQUIRE(m.ego);
  CHECK(m.ego->tor_outcome == TorState::Acknowledged);
  CHECK(*m.ego->tor_resolved_at - *m.ego->tor_issued_at == doctest::Approx(1.2).epsilon(0.03));
  CHECK(m.ego->mode == Mode::Driver);
  CHECK_FALSE(m.ego->entered_emergency);
  CHECK(m.mode_occupancy.at(Mode::Emergency) == 0.0);
  CHECK(m.invariant_violations == 0);
}

TEST_CASE("override pulse latches, attenuates and hands back") {
  auto sc = load("override_pulse.json");
  std::ostringstream out;
  auto m = run(sc, RunOptions{std::nullopt, std::nullopt, &out});
  auto trace = parse(out.str());
  // Pulse applies from the step starting at t = 4.0; row k holds the state after step k+1.
  std::optional<double> latch;
  double pulse_start = -1.0;
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const double t_begin = trace.num(i, "t") - 0.02;
    if (pulse_start < 0.0 && trace.num(i, "driver_torque") > 2.0) pulse_start = t_begin;
    if (!latch && trace.str(i, "override_active") == "1") latch = t_begin;
  }
  REQUIRE(pulse_start == doctest::Approx(4.0));
  REQUIRE(latch);
  CHECK(*latch - pulse_start >= 0.3 - 1e-9);
  CHECK(*latch - pulse_start <= 0.4 + 1e-9);
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const double t_begin = trace.num(i, "t") - 0.02;
    CHECK(std::abs(trace.num(i, "assist_torque")) <= 3.0);
    if (t_begin >= *latch + 0.5 - 1e-9) CHECK(std::abs(trace.num(i, "assist_torque")) <= 0.5);
  }
  CHECK(trace.str(trace.rows.size() - 1, "mode") == "Driver");
  CHECK(m.max_assist_torque <= 3.0);
  CHECK(m.invariant_violations == 0);
}

TEST_CASE("secured-end override turns the road unsecured and the ego hands over") {
  auto sc = load("override_pulse.json");
  sc.events.clear();
  sc.ego->persona = Persona::Attentive;
  ScenarioEvent e;
  e.t = 1.0;
  e.type = EventType::SecuredEndOverride;
  e.notice = 10.0;
  sc.events.push_back(e);
  auto m = run(sc);
  REQUIRE(m.ego);
  CHECK(m.ego->tor_reason == TorReason::SupervisorOrder);
  CHECK(m.ego->tor_outcome == TorState::Acknowledged);
  CHECK(m.ego->mode == Mode::Driver);
  CHECK(m.invariant_violations == 0);
}

TEST_CASE("perception fault in FullSystem enters Emergency and stops") {
  auto sc = load("override_pulse.json");
  sc.events.clear();
  sc.duration = 12.0;
  ScenarioEvent e;
  e.t = 2.0;
  e.type = EventType::SensorFault;
  e.subsystem = "perception";
  sc.events.push_back(e);
  auto m = run(sc);
  REQUIRE(m.ego);
  CHECK(m.ego->entered_emergency);
  CHECK(m.ego->mode == Mode::Emergency);
  CHECK(m.ego->state.v == 0.0);
}

TEST_CASE("external driver input reaches the loop at the next step") {
  auto sc = load("override_pulse.json");
  sc.events.clear();
  sc.ego->mode = Mode::Driver;
  Simulation sim(sc);
  sim.attach_driver(true);
  for (int i = 0; i < 10; ++i) sim.step();
  DriverInput in;
  in.throttle = 0.5;
  in.engage_request = Mode::FullSystem;
  sim.set_driver_input(in, sim.step_index());
  const long received = sim.step_index();
  sim.step();
  auto loop = sim.last_applied_input();
  REQUIRE(loop);
  CHECK(loop->first == received);
  CHECK(loop->second - loop->first <= 2);
  CHECK(sim.ego()->abv->mode == Mode::FullSystem);
  CHECK(sim.take_refusals().empty());
}

TEST_CASE("engage above 50 km/h is refused with a reason") {
  auto sc = load("override_pulse.json");
  sc.events.clear();
  sc.ego->mode = Mode::Driver;
  sc.ego->v = 19.44;
  Simulation sim(sc);
  sim.attach_driver(true);
  DriverInput in;
  in.throttle = 0.3;
  in.engage_request = Mode::FullSystem;
  sim.set_driver_input(in, 0);
  sim.step();
  auto refusals = sim.take_refusals();
  REQUIRE(refusals.size() == 1);
  CHECK(refusals[0].requested == Mode::FullSystem);
  CHECK(refusals[0].reason == Refusal::SpeedTooHigh);
  CHECK(sim.ego()->abv->mode == Mode::Driver);
}

TEST_CASE("a non-finite input raises an integrity fault carrying the trace tail") {
  auto sc = load("override_pulse.json");
  sc.events.clear();
  sc.ego->mode = Mode::Driver;
  Simulation sim(sc);
  sim.attach_driver(true);
  for (int i = 0; i < 40; ++i) sim.step();
  DriverInput in;
  in.throttle = std::numeric_limits<double>::quiet_NaN();
  sim.set_driver_input(in, sim.step_index());
  std::string message;
  try {
    sim.step();
  } catch (const IntegrityFault& e) {
    message = e.what();
  }
  REQUIRE_FALSE(message.empty());
  CHECK(message.find("integrity fault at step 40") != std::string::npos);
  CHECK(message.find(Simulation::trace_header()) != std::string::npos);
  auto tail = parse(message.substr(message.find(Simulation::trace_header())));
  CHECK(tail.rows.size() == 25);
  CHECK(tail.str(24, "step") == "40");
}

TEST_CASE("jam ring: mixed traffic runs collision free and metrics add up") {
  auto sc = load("jam_ring.json");
  sc.duration = 30.0;
  auto m = run(sc);
  CHECK(m.vehicles == 70);
  CHECK(m.abv_vehicles > 0);
  CHECK(m.abv_vehicles < m.vehicles);
  CHECK(m.collisions == 0);
  CHECK(m.invariant_violations == 0);
  CHECK(m.fuel_g_per_km == doctest::Approx(m.total_fuel_g / m.distance_km));
  double abv_seconds = 0.0;
  for (const auto& [mode, seconds] : m.mode_occupancy) abv_seconds += seconds;
  CHECK(abv_seconds == doctest::Approx(m.abv_vehicles * 30.0).epsilon(1e-9));
  long samples = 0;
  for (long c : m.min_ttc_histogram) {
    CHECK(c >= 0);
    samples += c;
  }
  CHECK(samples <= static_cast<long>(m.vehicles) * m.steps);
  CHECK(m.throughput_vph > 0.0);
}
