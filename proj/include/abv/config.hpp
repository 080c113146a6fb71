#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace abv {

constexpr double kFullSystemSpeedMax = 13.89;  // 50 km/h
constexpr double kPi = 3.14159265358979323846;

struct VehicleParams {
  double wheelbase = 2.7;
  double length = 4.5;
  double width = 1.8;
  double steer_max = 0.55;       // rad
  double steer_rate_max = 0.8;   // rad/s
  double accel_min = -6.0;
  double accel_max = 2.0;
  double jerk_max = 4.0;         // m/s^3
  double mass = 1500.0;          // kg
};

struct PerceptionParams {
  double lane_sigma_d = 0.05;
  double lane_sigma_psi = 0.01;
  double lane_debounce = 0.5;
  double lane_range = 40.0;
  double loc_sigma_s = 0.5;
  double loc_sigma_v = 0.1;
  double loc_alpha = 0.3;
  double camera_range = 40.0;
  double camera_half_fov = 22.5 * kPi / 180.0;
  double camera_sigma = 0.3;
  double camera_miss = 0.05;
  double laser_range = 80.0;
  double laser_half_fov = 60.0 * kPi / 180.0;
  double laser_sigma = 0.1;
  double laser_speed_sigma = 0.1;
  double laser_miss = 0.02;
  double occlusion_radius = 1.0;
  double radar_range = 40.0;
  double radar_half_width = 6.0;   // lateral reach either side
  double radar_sigma = 0.2;
  double radar_speed_sigma = 0.2;
  double radar_miss = 0.02;
};

struct FusionParams {
  double gate = 2.0;
  double measurement_weight = 0.7;
  double laser_share = 0.9;   // laser weight when both sensors hit one track
  double speed_gain = 0.1;    // alpha-beta speed correction for camera-only updates
  int confirm_hits = 3;
  int delete_misses = 5;
};

struct ArbiterParams {
  double full_speed_max = kFullSystemSpeedMax;
  double hysteresis = 0.55;
  double dwell = 1.0;
  double tor_deadline = 10.0;
  double monitor_window = 2.0;
  double torque_activity = 0.3;
  double pedal_activity = 0.05;
  double tor_margin = 50.0;      // m kept before a secured-road end
  double degrade_decel = 0.5;    // m/s^2 used to shape the speed setpoint under TOR
};

struct PlannerParams {
  double tick = 0.1;
  std::vector<double> horizons{3.0, 4.0, 5.0};
  std::vector<double> speed_offsets{-2.0, -1.0, 0.0, 1.0};
  double time_gap = 1.8;
  double standstill_gap = 3.0;
  std::vector<double> stop_margins{0.0, 1.0, 2.0, 4.0};
  double clearance_floor = 2.0;
  double clearance_time = 0.5;
  double lateral_accel_max = 2.5;
  double w_speed = 1.0;
  double w_jerk = 0.5;
  double w_lane_change = 2.0;
  double w_ttc = 4.0;
  double ttc_horizon = 5.0;
  double nominal_accel_max = 1.5;
  double nominal_decel_max = 4.0;
  double mrs_decel_emergency_lane = 2.5;
  double mrs_decel_in_lane = 3.0;
  double emergency_decel = 6.0;
  double speed_margin = 0.15;
  double lookahead = 100.0;
  double stationary_speed = 0.5;
};

struct ControlParams {
  double k_d = 0.5;
  double k_psi = 1.2;
  double k_v = 0.8;
  double gap_k = 0.25;
  double gap_kv = 0.5;
  double time_gap = 1.8;
  double standstill_gap = 3.0;
  double min_gap = 2.0;           // braking floor behind a closing lead
  double brake_preview = 0.3;     // s of closing speed reserved for the jerk-limited onset
  double torque_per_rad = 20.0;   // 2.0 N·m per 0.1 rad
  double assist_max = 3.0;
  double override_torque = 2.0;
  double override_time = 0.3;
  double override_floor = 0.15;
  double ramp_time = 0.5;
  double release_torque = 0.5;
  double release_time = 2.0;
  double assist_deadband = 0.2;
  double pedal_gain = 20.0;       // N per (m/s^2 excess / 2)
  double pedal_cap = 40.0;
  double eco_coast_decel = 0.4;
  double eco_lookahead = 200.0;
};

struct FuelParams {
  double idle = 0.15;      // g/s
  double air_density = 1.2;
  double drag_coeff = 0.62;
  double frontal_area = 2.0;
  double rolling = 0.011;
  double gravity = 9.81;
  double efficiency = 0.30;
  double lhv = 43000.0;    // J/g
};

struct IdmParams {
  double a_max = 1.0;
  double b_comf = 1.5;
  double s0 = 2.0;
  double time_gap = 1.5;
  double delta = 4.0;
  double accel_floor = -8.0;
};

struct SupervisorParams {
  double period = 1.0;
  double jam_density = 40.0;
  double dense_density = 25.0;
  double jam_advice = 8.33;
  double dense_advice = 11.11;
  double ttl = 10.0;
};

struct SimParams {
  double dt = 0.02;
  double planner_period = 0.1;
  double supervisor_period = 1.0;
};

struct Config {
  VehicleParams vehicle;
  PerceptionParams perception;
  FusionParams fusion;
  ArbiterParams arbiter;
  PlannerParams planner;
  ControlParams control;
  FuelParams fuel;
  IdmParams idm;
  SupervisorParams supervisor;
  SimParams sim;
};

/// Flat "section.key" access to every scalar in Config.
class ConfigRegistry {
 public:
  static const ConfigRegistry& instance();

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  void set(Config& cfg, const std::string& key, double value) const;
  double get(const Config& cfg, const std::string& key) const;
  std::vector<std::string> keys() const;

 private:
  ConfigRegistry();
  std::map<std::string, std::nullptr_t> entries_;
};

/// Applies overrides in key order; throws std::invalid_argument on unknown keys.
Config apply_overrides(Config base, const std::map<std::string, double>& overrides);

}  // namespace abv
