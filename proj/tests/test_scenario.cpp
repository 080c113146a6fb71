#include <doctest.h>

#include <random>
#include <string>

#include "abv/scenario.hpp"

using namespace abv;

namespace {

const char* kMinimal = R"({
  "schema_version": 1,
  "duration": 10,
  "road": {
    "segments": [
      {"length": 500, "secured": true}
    ]
  },
  "ego": {"v": 10, "mode": "FullSystem"}
})";

std::vector<std::string> problems_of(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ScenarioError& e) {
    return e.problems();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& list, const std::string& needle) {
  for (const auto& p : list)
    if (p.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("minimal scenario resolves every default") {
  auto sc = parse_scenario(kMinimal);
  CHECK(sc.duration == 10.0);
  CHECK(sc.seed == 1);
  REQUIRE(sc.map.segments().size() == 1);
  CHECK(sc.map.segments()[0].length == 500.0);
  CHECK(sc.map.segments()[0].lane_count == 1);
  CHECK(sc.map.segments()[0].speed_limit == 13.89);
  CHECK_FALSE(sc.map.closed());
  REQUIRE(sc.ego);
  CHECK(sc.ego->mode == Mode::FullSystem);
  CHECK(sc.ego->persona == Persona::Absent);
  CHECK_FALSE(sc.traffic);
  const auto cfg = sc.config();
  const Config defaults;
  for (const auto& key : ConfigRegistry::instance().keys())
    CHECK(ConfigRegistry::instance().get(cfg, key) == ConfigRegistry::instance().get(defaults, key));
}

TEST_CASE("negative segment length names the field and its line") {
  std::string text = kMinimal;
  text.replace(text.find("500"), 3, "-5");
  auto problems = problems_of(text);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("line 6") == 0);
  CHECK(problems[0].find("road.segments[0].length") != std::string::npos);
}

TEST_CASE("unknown keys, type errors and syntax errors carry line numbers") {
  auto problems = problems_of(R"({
  "schema_version": 1,
  "duration": 10,
  "road": {"segments": [{"length": 100}]},
  "egg": {}
})");
  REQUIRE(problems.size() == 1);
  CHECK(problems[0] == "line 5: egg: unknown key");

  problems = problems_of("{\n  \"schema_version\": 1,\n  \"duration\": \"long\",\n  \"road\": {\"segments\": [{\"length\": 1}]}\n}");
  REQUIRE(problems.size() == 1);
  CHECK(problems[0] == "line 3: duration: expected a number");

  problems = problems_of("{\n  \"schema_version\": 1,\n  \"duration\": 10,,\n}");
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("line 3:") == 0);
}

TEST_CASE("invariant violations are listed exhaustively") {
  auto problems = problems_of(R"({
  "schema_version": 2,
  "duration": 0,
  "road": {"segments": [{"length": 100, "lane_count": 0}]},
  "ego": {"persona": "sleepy"},
  "traffic": {"penetration": 1.5},
  "events": [
    {"t": 5, "type": "sensor_fault"},
    {"t": 1, "type": "obstacle_spawn", "s": 20, "ahead": 10},
    {"t": 2, "type": "teleport"}
  ],
  "config": {"planner.nope": 1}
})");
  CHECK(any_contains(problems, "schema_version: unsupported version 2"));
  CHECK(any_contains(problems, "duration: must be finite and > 0"));
  CHECK(any_contains(problems, "line 4: road.segments[0].lane_count"));
  CHECK(any_contains(problems, "line 5: ego.persona: unknown persona"));
  CHECK(any_contains(problems, "line 6: traffic.penetration"));
  CHECK(any_contains(problems, "events[0].t: must lie in [0, duration]"));
  CHECK(any_contains(problems, "line 9: events[1]: obstacle_spawn needs exactly one"));
  CHECK(any_contains(problems, "events[1].t: events must be time-ordered"));
  CHECK(any_contains(problems, "line 10: events[2].type: unknown event type"));
  CHECK(any_contains(problems, "line 12: config.planner.nope: unknown configuration key"));
  CHECK(problems.size() >= 10);
}

TEST_CASE("round trip: load, serialize, load gives the identical scenario") {
  auto sc = parse_scenario(R"({
  "schema_version": 1,
  "name": "mixed",
  "duration": 30,
  "seed": 42,
  "road": {"closed": true, "segments": [
    {"id": 3, "length": 400, "curvature": 0.001, "lane_count": 2, "secured": true, "has_emergency_lane": true},
    {"id": 9, "length": 250.5, "speed_limit": 8.33, "instrumented": true, "marking_quality": 0.7}
  ]},
  "ego": {"s": 10, "lane": 1, "v": 12.5, "mode": "LongiAdas", "persona": "attentive"},
  "traffic": {"density": 12, "penetration": 0.3},
  "events": [
    {"t": 1, "type": "obstacle_spawn", "ahead": 40},
    {"t": 2, "type": "driver_input", "steer_torque": 2.5, "duration": 0.4, "engage": "FullSystem"},
    {"t": 3, "type": "secured_end_override", "segment": 3, "notice": 5},
    {"t": 4, "type": "sensor_fault", "subsystem": "actuation"}
  ],
  "gantry_s": 100,
  "config": {"planner.time_gap": 2.0, "control.k_d": 0.6}
})");
  auto again = parse_scenario(serialize(sc));
  CHECK(again == sc);
  CHECK(serialize(again) == serialize(sc));
  CHECK(again.config().planner.time_gap == 2.0);
}

TEST_CASE("round trip holds for arbitrary doubles") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    Scenario sc;
    sc.duration = 1.0 + 100.0 * u(rng);
    sc.seed = rng();
    std::vector<RoadSegment> segs(1 + k % 3);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      segs[i].id = static_cast<int>(i);
      segs[i].length = 10.0 + 1000.0 * u(rng);
      segs[i].curvature = 0.01 * (u(rng) - 0.5);
      segs[i].speed_limit = 5.0 + 20.0 * u(rng);
      segs[i].marking_quality = u(rng);
    }
    sc.map = RoadMap(segs, k % 2 == 0);
    EgoSpec ego;
    ego.v = 14.0 * u(rng);
    ego.s = 5.0 * u(rng);
    sc.ego = ego;
    ScenarioEvent e;
    e.t = sc.duration * u(rng);
    e.ahead = 50.0 * u(rng);
    sc.events.push_back(e);
    REQUIRE(validate(sc).empty());
    CHECK(parse_scenario(serialize(sc)) == sc);
  }
}
