// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
// Criterion numbers on the command line restrict the run to those.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <Eigen/LU>

#include "abv/modes.hpp"
#include "abv/quintic.hpp"
#include "abv/simulation.hpp"
#include "abv/sweep.hpp"

using namespace abv;

namespace {

using Clock = std::chrono::steady_clock;

Scenario load(const std::string& name) { return load_scenario(std::string(ABV_SCENARIO_DIR) + "/" + name); }

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict s1() {
  const auto start = Clock::now();
  const double v = 13.89;
  const double oracle = v * 0.3 + v * v / (2.0 * 4.0);
  Verdict out;
  out.require(oracle < 39.0, "oracle braking distance exceeds 39 m");
  auto m = run(load("s1_obstacle.json"));
  const double wall = seconds_since(start);
  out.require(m.ego && m.ego->state.v == 0.0, "ego did not stop");
  out.require(m.ego && m.ego->front_gap >= 1.0, fmt("final gap %.2f m < 1 m", m.ego ? m.ego->front_gap : 0.0));
  out.require(m.ego && m.ego->driver_activity == 0.0, "driver input was used");
  out.require(m.collisions == 0, "collision");
  out.require(wall < 5.0, fmt("runtime %.1f s", wall));
  if (out.pass)
    out.detail = fmt("stopped with %.2f m gap, oracle braking distance %.2f m, %.2f s wall", m.ego->front_gap, oracle,
                     wall);
  return out;
}

Verdict s2() {
  Verdict out;
  auto lane = run(load("s2_tor_emergency_lane.json"));
  auto in_lane = run(load("s2_tor_in_lane.json"));
  auto attentive = run(load("s2_tor_attentive.json"));
  for (const auto* m : {&lane, &in_lane}) {
    const auto& e = *m->ego;
    out.require(e.tor_issued_at.has_value(), "no TOR");
    out.require(e.tor_outcome == TorState::Expired, "TOR not expired");
    if (e.tor_issued_at && e.tor_resolved_at)
      out.require(std::abs(*e.tor_resolved_at - *e.tor_issued_at - 10.0) <= 0.03, "TOR did not expire at +10 s");
    out.require(e.mode == Mode::Emergency && e.state.v == 0.0, "not stopped in Emergency");
  }
  // Issued before the boundary: the ego covered less than 300 m by then.
  auto probe = load("s2_tor_emergency_lane.json");
  Simulation sim(probe);
  while (!sim.finished() && !sim.ego()->abv->tor) sim.step();
  out.require(sim.ego()->state.s < 300.0, "TOR issued past the boundary");
  out.require(std::abs(lane.ego->state.d + 3.5) < 0.3, fmt("emergency lane offset %.2f", lane.ego->state.d + 3.5));
  out.require(std::abs(in_lane.ego->state.d) < 0.3, fmt("in-lane offset %.2f", in_lane.ego->state.d));
  out.require(attentive.ego->tor_outcome == TorState::Acknowledged && attentive.ego->mode == Mode::Driver,
              "attentive variant did not hand over");
  out.require(!attentive.ego->entered_emergency, "attentive variant entered Emergency");
  if (out.pass)
    out.detail = fmt("TOR at s=%.1f m; stops at d=%.2f (emergency lane) and d=%.2f (in lane); attentive handed over",
                     sim.ego()->state.s, lane.ego->state.d, in_lane.ego->state.d);
  return out;
}

// Written from the rule list, independently of step_arbiter.
Mode rule_oracle(const TruthRow& r) {
  const bool full_guard = r.healthy && r.secured && r.speed.v <= 13.89;
  const bool drive_back = r.action == DriverAction::Disengage || r.action == DriverAction::Override;
  switch (r.mode) {
    case Mode::Emergency:
      return r.action == DriverAction::ResetEmergency && r.speed.v == 0.0 ? Mode::Driver : Mode::Emergency;
    case Mode::FullSystem:
      if (!r.healthy) return Mode::Emergency;
      if (drive_back) return Mode::Driver;
      if (!full_guard)
        return r.ready && (r.action == DriverAction::Acknowledge || r.action == DriverAction::Override) ? Mode::Driver
                                                                                                        : Mode::Emergency;
      if (r.action == DriverAction::EngageLongiAdas) return Mode::LongiAdas;
      return Mode::FullSystem;
    case Mode::LongiAdas:
      if (!r.healthy) return Mode::Emergency;
      if (drive_back) return Mode::Driver;
      if (r.action == DriverAction::EngageFullSystem && full_guard) return Mode::FullSystem;
      return Mode::LongiAdas;
    case Mode::Driver:
      if (r.action == DriverAction::EngageLongiAdas && r.healthy) return Mode::LongiAdas;
      if (r.action == DriverAction::EngageFullSystem && full_guard) return Mode::FullSystem;
      return Mode::Driver;
  }
  return r.mode;
}

Verdict truth_table() {
  Verdict out;
  const auto rows = dump_truth_table();
  int mismatches = 0, unsafe = 0;
  for (const auto& r : rows) {
    if (rule_oracle(r) != r.result) ++mismatches;
    if (r.result == Mode::FullSystem && (!r.secured || r.speed.v > 13.89)) ++unsafe;
  }
  out.require(rows.size() == 672, "unexpected cell count");
  out.require(mismatches == 0, std::to_string(mismatches) + " cells differ from the oracle");
  out.require(unsafe == 0, std::to_string(unsafe) + " unsafe FullSystem cells");
  if (out.pass) out.detail = std::to_string(rows.size()) + " cells match, 0 unsafe";
  return out;
}

Verdict quintic() {
  Verdict out;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::uniform_real_distribution<double> UT(1.0, 6.0);
  double worst_coeff = 0, worst_residual = 0, worst_fd = 0;
  for (int n = 0; n < 1000; ++n) {
    // Lateral boundary states in the planner's range: offsets within two lanes, horizons 1-6 s.
    BoundaryState<double> a{4 * U(rng), 2 * U(rng), U(rng)};
    BoundaryState<double> b{4 * U(rng), 2 * U(rng), U(rng)};
    const double T = UT(rng);
    Eigen::Matrix<double, 6, 6> M = Eigen::Matrix<double, 6, 6>::Zero();
    M(0, 0) = 1;
    M(1, 1) = 1;
    M(2, 2) = 2;
    for (int i = 0; i < 6; ++i) {
      M(3, i) = std::pow(T, i);
      if (i >= 1) M(4, i) = i * std::pow(T, i - 1);
      if (i >= 2) M(5, i) = i * (i - 1) * std::pow(T, i - 2);
    }
    Vector6<double> rhs;
    rhs << a.p, a.v, a.a, b.p, b.v, b.a;
    const Vector6<double> expected = M.fullPivLu().solve(rhs);
    const auto q = solve_quintic(a, b, T);
    worst_coeff = std::max(worst_coeff, (q.coeffs() - expected).cwiseAbs().maxCoeff());
    worst_residual = std::max({worst_residual, std::abs(q.position(0) - a.p), std::abs(q.velocity(0) - a.v),
                               std::abs(q.acceleration(0) - a.a), std::abs(q.position(T) - b.p),
                               std::abs(q.velocity(T) - b.v), std::abs(q.acceleration(T) - b.a)});
    const double h = 1e-4;
    for (double t : {0.2 * T, 0.5 * T, 0.9 * T}) {
      worst_fd = std::max({worst_fd, std::abs((q.position(t + h) - q.position(t - h)) / (2 * h) - q.velocity(t)),
                           std::abs((q.velocity(t + h) - q.velocity(t - h)) / (2 * h) - q.acceleration(t)),
                           std::abs((q.acceleration(t + h) - q.acceleration(t - h)) / (2 * h) - q.jerk(t))});
    }
  }
  out.require(worst_coeff < 1e-9, fmt("coefficient deviation %.3g", worst_coeff));
  out.require(worst_residual < 1e-9, fmt("endpoint residual %.3g", worst_residual));
  out.require(worst_fd < 1e-5, fmt("finite-difference error %.3g", worst_fd));
  if (out.pass)
    out.detail = fmt("1000 sets: coeff %.2g, residual %.2g, finite difference %.2g", worst_coeff, worst_residual,
                     worst_fd);
  return out;
}

Scenario random_mixed(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Scenario sc;
  sc.name = "random_mixed_" + std::to_string(seed);
  sc.seed = seed;
  sc.duration = 60.0;
  const int lanes = U(rng) < 0.5 ? 2 : 3;
  const int count = U(rng) < 0.5 ? 2 : 3;
  const double limits[] = {8.33, 11.11, 13.89};
  std::vector<RoadSegment> segs;
  for (int i = 0; i < count; ++i) {
    RoadSegment s;
    s.id = i + 1;
    s.length = 500.0 + 400.0 * U(rng);
    s.lane_count = lanes;
    s.secured = true;
    s.has_emergency_lane = U(rng) < 0.7;
    s.speed_limit = i == 0 ? 13.89 : limits[static_cast<int>(U(rng) * 3.0) % 3];
    if (i > 0 && U(rng) < 0.5) s.curvature = (U(rng) < 0.5 ? -1.0 : 1.0) * 0.006 * U(rng);
    segs.push_back(s);
  }
  sc.map = RoadMap(segs, false);
  EgoSpec ego;
  ego.s = 50.0;
  ego.lane = static_cast<int>(U(rng) * lanes) % lanes;
  ego.v = 8.0 + 4.0 * U(rng);
  ego.mode = Mode::FullSystem;
  ego.persona = U(rng) < 0.5 ? Persona::Attentive : Persona::Distracted;
  sc.ego = ego;
  TrafficSpec t;
  t.density = 8.0 + 12.0 * U(rng);
  t.penetration = 0.2 + 0.6 * U(rng);
  // Traffic where the ego can meet it within the run.
  t.region_end = std::min(sc.map.total_length() - 200.0, 1200.0);
  sc.traffic = t;
  return sc;
}

Verdict legality() {
  Verdict out;
  int collisions = 0, violations = 0;
  double worst_excess = -1e9, worst_clearance = 1e9;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto sc = random_mixed(100 + i);
    if (!validate(sc).empty()) {
      out.require(false, "generated scenario " + std::to_string(i) + " is invalid");
      continue;
    }
    const auto m = run(sc);
    collisions += m.collisions;
    violations += m.invariant_violations;
    worst_excess = std::max(worst_excess, m.max_speed_excess);
    worst_clearance = std::min(worst_clearance, m.min_clearance);
    if (m.collisions || m.max_speed_excess > 0.1 || m.min_clearance < 2.0)
      out.require(false, "scenario seed " + std::to_string(sc.seed));
  }
  out.require(collisions == 0, std::to_string(collisions) + " collisions");
  out.require(violations == 0, std::to_string(violations) + " invariant violations");
  out.require(worst_excess <= 0.1, fmt("speed excess %.3f m/s", worst_excess));
  out.require(worst_clearance >= 2.0, fmt("clearance %.2f m", worst_clearance));
  if (out.pass)
    out.detail = fmt("50 x 60 s: max speed excess %.3f m/s, min clearance %.2f m, 0 collisions", worst_excess,
                     worst_clearance);
  return out;
}

Verdict shared_control() {
  Verdict out;
  std::ostringstream trace;
  auto m = run(load("override_pulse.json"), RunOptions{std::nullopt, std::nullopt, &trace});
  std::stringstream in(trace.str());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream h(line);
    std::string c;
    while (std::getline(h, c, ',')) header.push_back(c);
  }
  auto col = [&](const char* name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  double pulse = -1.0, latch = -1.0, max_assist = 0.0, late_assist = 0.0;
  std::string last_mode;
  std::vector<std::pair<double, double>> assist;
  while (std::getline(in, line)) {
    std::vector<std::string> c;
    std::stringstream r(line);
    std::string cell;
    while (std::getline(r, cell, ',')) c.push_back(cell);
    const double t = std::stod(c[col("t")]) - 0.02;
    if (pulse < 0.0 && std::stod(c[col("driver_torque")]) > 2.0) pulse = t;
    if (latch < 0.0 && c[col("override_active")] == "1") latch = t;
    const double a = std::abs(std::stod(c[col("assist_torque")]));
    max_assist = std::max(max_assist, a);
    assist.emplace_back(t, a);
    last_mode = c[col("mode")];
  }
  for (auto [t, a] : assist)
    if (latch >= 0.0 && t >= latch + 0.5 - 1e-9) late_assist = std::max(late_assist, a);
  const double delay = latch - pulse;
  out.require(pulse >= 0.0 && latch >= 0.0, "no override latch");
  out.require(delay >= 0.3 - 1e-9 && delay <= 0.4 + 1e-9, fmt("latch after %.2f s", delay));
  out.require(late_assist <= 0.5, fmt("assist %.2f N m after the ramp", late_assist));
  out.require(last_mode == "Driver", "mode is " + last_mode);
  out.require(max_assist <= 3.0 && m.max_assist_torque <= 3.0, fmt("assist peak %.2f N m", max_assist));
  if (out.pass) out.detail = fmt("latched after %.2f s, peak assist %.2f N m, mode Driver", delay, max_assist);
  return out;
}

Verdict determinism() {
  Verdict out;
  auto twice = [&](Scenario sc, const std::string& label) {
    std::ostringstream a, b;
    run(sc, RunOptions{std::nullopt, std::nullopt, &a});
    run(sc, RunOptions{std::nullopt, std::nullopt, &b});
    out.require(a.str() == b.str() && !a.str().empty(), label + " traces differ");
  };
  twice(load("s1_obstacle.json"), "S1");
  twice(load("s2_tor_emergency_lane.json"), "S2");
  twice(load("s2_tor_in_lane.json"), "S2 in lane");
  twice(load("s2_tor_attentive.json"), "S2 attentive");
  auto jam = load("jam_ring.json");
  jam.traffic->penetration = 0.5;
  twice(jam, "jam ring p=0.5");
  if (out.pass) out.detail = "S1, three S2 variants and jam ring p=0.5 byte-identical";
  return out;
}

Verdict sweep_harness() {
  Verdict out;
  const auto start = Clock::now();
  auto report = sweep(load("jam_ring.json"), {0.0, 0.5, 1.0}, 5);
  const double wall = seconds_since(start);
  out.require(report.points.size() == 3, "missing points");
  for (const auto& p : report.points) {
    out.require(p.runs.size() == 5 && p.errors.empty(), fmt("p=%.1f incomplete", p.penetration));
    out.require(!p.tainted, fmt("p=%.1f tainted", p.penetration));
    out.require(std::isfinite(p.fuel_g_per_km.mean) && p.fuel_g_per_km.mean > 0.0, "fuel missing");
    out.require(std::isfinite(p.throughput_vph.mean) && p.throughput_vph.mean > 0.0, "throughput missing");
  }
  const auto csv = sweep_csv(report);
  out.require(std::count(csv.begin(), csv.end(), '\n') == 4, "report rows");
  out.require(wall < 600.0, fmt("%.0f s wall", wall));
  if (out.pass) {
    out.detail = fmt("15 runs in %.0f s; throughput %.0f -> %.0f veh/h", wall, report.points.front().throughput_vph.mean,
                     report.points.back().throughput_vph.mean);
    out.detail += fmt(", fuel %.1f -> %.1f g/km", report.points.front().fuel_g_per_km.mean,
                      report.points.back().fuel_g_per_km.mean);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"1 S1 stop within sensing range", s1},
      {"2 S2 TOR timeout to Emergency", s2},
      {"3 mode truth table", truth_table},
      {"4 quintic oracle", quintic},
      {"5 legality by construction", legality},
      {"6 shared-control envelope", shared_control},
      {"7 determinism", determinism},
      {"8 sweep harness", sweep_harness},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool all = true;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    if (++index, !only.empty() && !only.contains(index)) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    all = all && v.pass;
    std::printf("%s criterion %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
