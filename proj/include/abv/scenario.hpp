#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "abv/config.hpp"
#include "abv/geometry.hpp"
#include "abv/modes.hpp"
#include "abv/traffic.hpp"

namespace abv {

inline constexpr int kScenarioSchemaVersion = 1;

enum class Persona { Attentive, Distracted, Absent, Auto };
std::string_view to_string(Persona persona);
std::optional<Persona> parse_persona(std::string_view text);

/// Seconds from TOR issue until the persona grabs the wheel; nullopt never.
std::optional<double> acknowledge_delay(Persona persona);

struct EgoSpec {
  double s = 0.0;
  int lane = 0;
  double v = 0.0;
  Mode mode = Mode::Driver;           // requested at t = 0
  Persona persona = Persona::Absent;
  double desired_speed = kFullSystemSpeedMax;

  bool operator==(const EgoSpec&) const = default;
};

enum class EventType { ObstacleSpawn, SecuredEndOverride, SensorFault, DriverInput };
std::string_view to_string(EventType type);

struct ScenarioEvent {
  double t = 0.0;
  EventType type = EventType::ObstacleSpawn;

  // obstacle_spawn: absolute s, or `ahead` of the ego, centre to centre.
  std::optional<double> s;
  std::optional<double> ahead;
  int lane = 0;

  // secured_end_override: segment id (all secured segments when unset) and
  // the notice given before the segment stops being secured.
  std::optional<int> segment;
  double notice = 10.0;

  // sensor_fault
  std::string subsystem = "perception";   // or "actuation"

  // driver_input (driver script entry) held for `duration`.
  DriverInput input;
  double duration = 0.0;

  bool operator==(const ScenarioEvent&) const = default;
};

struct Scenario {
  int schema_version = kScenarioSchemaVersion;
  std::string name;
  double duration = 10.0;
  std::uint64_t seed = 1;
  RoadMap map;
  std::optional<EgoSpec> ego;
  std::optional<TrafficSpec> traffic;
  std::vector<ScenarioEvent> events;
  std::optional<double> gantry_s;   // throughput gantry; road midpoint by default
  std::map<std::string, double> overrides;

  Config config() const { return apply_overrides(Config{}, overrides); }
  bool operator==(const Scenario&) const = default;
};

/// Every problem found in a scenario document, one "line N: path: message"
/// (or "path: message") entry each.
class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::string& path);

/// Invariant violations of an in-memory scenario; empty when valid.
std::vector<std::string> validate(const Scenario& scenario);

nlohmann::ordered_json to_json(const Scenario& scenario);
std::string serialize(const Scenario& scenario);

}  // namespace abv
