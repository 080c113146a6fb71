#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abv/control.hpp"
#include "abv/modes.hpp"
#include "abv/perception.hpp"
#include "abv/planner.hpp"
#include "abv/random.hpp"
#include "abv/scenario.hpp"
#include "abv/traffic.hpp"

namespace abv {

inline constexpr int kTraceSchemaVersion = 1;
inline constexpr int kMetricsSchemaVersion = 1;

struct Obstacle {
  int id = 0;
  double s = 0.0;
  double d = 0.0;
  double length = 1.0;
};

/// Everything an equipped vehicle carries: sensing, fusion, arbitration,
/// the latched plan and the shared-control state.
struct AbvStack {
  Persona persona = Persona::Auto;
  Localizer localizer;
  LaneTracker lane_tracker;
  DriverMonitor monitor;
  SpeedGuard guard;
  Rng perception_rng;
  Rng localizer_rng;
  Rng lane_rng;

  std::vector<ObjectTrack> tracks;
  TrackIdSource track_ids;
  VehicleState estimate;
  SystemHealth health;

  Mode mode = Mode::Driver;
  std::optional<TakeOverRequest> tor;
  double tor_issue_speed = 0.0;
  SharedControlState shared;
  std::optional<PlanResult> plan;
  std::optional<Trajectory> mrs;   // latched on entering Emergency
  DriverInput input;               // applied this step

  double standstill_time = 0.0;
  double next_engage_try = 0.0;
};

struct Agent {
  int id = 0;
  bool ego = false;
  VehicleState state;
  double desired_speed = kFullSystemSpeedMax;
  double speed_factor = 1.0;   // human driving: desired speed as a fraction of the limit
  double length = 4.5;
  bool exited = false;
  FuelState fuel;
  Command command;
  std::optional<AbvStack> abv;
};

struct TorOutcomes {
  int issued = 0;
  int acknowledged = 0;
  int expired = 0;
};

struct EgoSummary {
  VehicleState state;
  Mode mode = Mode::Driver;
  bool entered_emergency = false;
  std::optional<double> tor_issued_at;
  std::optional<double> tor_resolved_at;
  std::optional<TorState> tor_outcome;
  std::optional<TorReason> tor_reason;
  double front_gap = 0.0;        // bumper gap to whatever is ahead in its path; infinity if nothing
  double driver_activity = 0.0;  // integral of |torque| + pedals over the run
};

struct Metrics {
  int schema_version = kMetricsSchemaVersion;
  std::uint64_t seed = 0;
  double duration = 0.0;
  long steps = 0;
  int vehicles = 0;
  int abv_vehicles = 0;

  double throughput_vph = 0.0;
  double mean_speed = 0.0;
  double total_fuel_g = 0.0;
  double distance_km = 0.0;
  double fuel_g_per_km = 0.0;
  int collisions = 0;
  std::vector<double> ttc_bin_edges{0.0, 1.0, 2.0, 3.0, 5.0, 10.0};
  std::vector<long> min_ttc_histogram = std::vector<long>(6, 0);   // vehicle-steps; last bin open-ended
  double ttc_lt_2s_exposure = 0.0;                                  // vehicle-seconds
  std::map<Mode, double> mode_occupancy;                           // ABV-seconds
  TorOutcomes tor;
  int invariant_violations = 0;

  // Automated driving (FullSystem or Emergency) only.
  double max_speed_excess = -1e9;   // over the statutory limit
  double min_clearance = 1e9;       // bumper gap to the vehicle ahead
  double max_assist_torque = 0.0;

  std::optional<EgoSummary> ego;
};

nlohmann::ordered_json to_json(const Metrics& metrics);

/// A refused engagement request of the ego, for the cockpit.
struct RefusalNotice {
  long step = 0;
  double t = 0.0;
  Mode requested = Mode::FullSystem;
  Refusal reason = Refusal::None;
};

/// The two-rate closed loop: perception -> fusion -> arbiter -> planner ->
/// control -> world every 0.02 s, planning every 0.1 s, the infrastructure
/// supervisor every 1 s.
class Simulation {
 public:
  explicit Simulation(Scenario scenario, std::optional<std::uint64_t> seed = std::nullopt,
                      std::optional<double> duration = std::nullopt);

  void step();
  bool finished() const { return step_ >= total_steps_; }
  long step_index() const { return step_; }
  long total_steps() const { return total_steps_; }
  double time() const { return step_ * dt_; }
  double dt() const { return dt_; }

  const Scenario& scenario() const { return scenario_; }
  const Config& config() const { return config_; }
  const RoadMap& map() const { return map_; }
  const std::vector<Agent>& agents() const { return agents_; }
  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  const Agent* ego() const;
  const Supervisor& supervisor() const { return supervisor_; }
  const SpeedLimits& limits() const { return limits_; }

  /// Metrics so far (final once finished()).
  Metrics metrics() const;

  /// Writes the CSV header now and one row per step from here on.
  void set_trace(std::ostream* out);
  static std::string trace_header();

  /// An attached external driver replaces the ego's scripted persona.
  void attach_driver(bool attached);
  bool driver_attached() const { return external_; }
  /// Continuous inputs are held until replaced; one-shot requests apply once
  /// at the next step boundary.
  void set_driver_input(const DriverInput& input, long received_step);
  /// (received_step, applied_step) of the last external input that reached the loop.
  std::optional<std::pair<long, long>> last_applied_input() const { return last_applied_; }
  std::vector<RefusalNotice> take_refusals();

 private:
  struct Lead {
    double gap = 0.0;
    double v = 0.0;
    int id = -1;
  };

  void apply_events(double t);
  void supervise(double t);
  std::optional<Lead> truth_lead(std::size_t index) const;
  Command human_command(const Agent& agent, std::optional<Lead> lead, double t) const;
  Command abv_command(Agent& agent, double t);
  DriverInput driver_input(Agent& agent, double t);
  void plan_for(Agent& agent, double t);
  std::vector<Prediction> predictions_for(const Agent& agent, double origin, double shift) const;
  void accumulate(const std::vector<VehicleState>& before);
  void write_trace_row();
  std::string trace_row() const;
  void fail(const std::string& what) const;

  Scenario scenario_;
  Config config_;
  RoadMap map_;
  RandomStreams streams_;
  double dt_ = 0.02;
  long total_steps_ = 0;
  long planner_every_ = 5;
  long supervisor_every_ = 50;
  long step_ = 0;

  std::vector<Agent> agents_;
  std::vector<Obstacle> obstacles_;
  std::size_t next_event_ = 0;
  std::map<int, double> pending_unsecure_;   // segment id -> time it stops being secured
  Supervisor supervisor_;
  SpeedLimits limits_;
  double gantry_ = 0.0;

  bool external_ = false;
  DriverInput external_input_;
  std::optional<long> pending_received_;
  std::optional<std::pair<long, long>> last_applied_;
  std::vector<RefusalNotice> refusals_;

  // Accumulators.
  Metrics m_;
  double speed_sum_ = 0.0;
  long speed_samples_ = 0;
  long gantry_crossings_ = 0;
  std::set<std::pair<int, int>> colliding_;

  std::ostream* trace_ = nullptr;
  std::deque<std::string> tail_;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::ostream* trace = nullptr;
};

/// Headless run as fast as possible. Throws IntegrityFault (with the trace
/// tail) when a module reports a non-finite state.
Metrics run(const Scenario& scenario, const RunOptions& options = {});

}  // namespace abv
