#include "abv/config.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace abv {

namespace {

struct Entry {
  std::function<void(Config&, double)> set;
  std::function<double(const Config&)> get;
};

std::map<std::string, Entry>& table() {
  static std::map<std::string, Entry> t;
  return t;
}

#define ABV_REAL(section, field)                                                  \
  table()[#section "." #field] = Entry{                                           \
      [](Config& c, double v) { c.section.field = v; },                          \
      [](const Config& c) { return static_cast<double>(c.section.field); }}

#define ABV_INT(section, field)                                                   \
  table()[#section "." #field] = Entry{                                           \
      [](Config& c, double v) {                                                   \
        if (v != std::floor(v)) throw std::invalid_argument(#section "." #field " must be an integer"); \
        c.section.field = static_cast<int>(v);                                    \
      },                                                                          \
      [](const Config& c) { return static_cast<double>(c.section.field); }}

}  // namespace

ConfigRegistry::ConfigRegistry() {
  ABV_REAL(vehicle, wheelbase);
  ABV_REAL(vehicle, length);
  ABV_REAL(vehicle, width);
  ABV_REAL(vehicle, steer_max);
  ABV_REAL(vehicle, steer_rate_max);
  ABV_REAL(vehicle, accel_min);
  ABV_REAL(vehicle, accel_max);
  ABV_REAL(vehicle, jerk_max);
  ABV_REAL(vehicle, mass);

  ABV_REAL(perception, lane_sigma_d);
  ABV_REAL(perception, lane_sigma_psi);
  ABV_REAL(perception, lane_debounce);
  ABV_REAL(perception, lane_range);
  ABV_REAL(perception, loc_sigma_s);
  ABV_REAL(perception, loc_sigma_v);
  ABV_REAL(perception, loc_alpha);
  ABV_REAL(perception, camera_range);
  ABV_REAL(perception, camera_half_fov);
  ABV_REAL(perception, camera_sigma);
  ABV_REAL(perception, camera_miss);
  ABV_REAL(perception, laser_range);
  ABV_REAL(perception, laser_half_fov);
  ABV_REAL(perception, laser_sigma);
  ABV_REAL(perception, laser_speed_sigma);
  ABV_REAL(perception, laser_miss);
  ABV_REAL(perception, occlusion_radius);

  ABV_REAL(fusion, gate);
  ABV_REAL(fusion, measurement_weight);
  ABV_REAL(fusion, laser_share);
  ABV_REAL(fusion, speed_gain);
  ABV_INT(fusion, confirm_hits);
  ABV_INT(fusion, delete_misses);

  ABV_REAL(arbiter, full_speed_max);
  ABV_REAL(arbiter, hysteresis);
  ABV_REAL(arbiter, dwell);
  ABV_REAL(arbiter, tor_deadline);
  ABV_REAL(arbiter, monitor_window);
  ABV_REAL(arbiter, torque_activity);
  ABV_REAL(arbiter, pedal_activity);
  ABV_REAL(arbiter, tor_margin);
  ABV_REAL(arbiter, degrade_decel);

  ABV_REAL(planner, tick);
  ABV_REAL(planner, time_gap);
  ABV_REAL(planner, standstill_gap);
  ABV_REAL(planner, clearance_floor);
  ABV_REAL(planner, clearance_time);
  ABV_REAL(planner, lateral_accel_max);
  ABV_REAL(planner, w_speed);
  ABV_REAL(planner, w_jerk);
  ABV_REAL(planner, w_lane_change);
  ABV_REAL(planner, w_ttc);
  ABV_REAL(planner, ttc_horizon);
  ABV_REAL(planner, nominal_accel_max);
  ABV_REAL(planner, nominal_decel_max);
  ABV_REAL(planner, mrs_decel_emergency_lane);
  ABV_REAL(planner, mrs_decel_in_lane);
  ABV_REAL(planner, emergency_decel);
  ABV_REAL(planner, speed_margin);
  ABV_REAL(planner, lookahead);
  ABV_REAL(planner, stationary_speed);

  ABV_REAL(control, k_d);
  ABV_REAL(control, k_psi);
  ABV_REAL(control, k_v);
  ABV_REAL(control, gap_k);
  ABV_REAL(control, gap_kv);
  ABV_REAL(control, time_gap);
  ABV_REAL(control, standstill_gap);
  ABV_REAL(control, min_gap);
  ABV_REAL(control, brake_preview);
  ABV_REAL(control, torque_per_rad);
  ABV_REAL(control, assist_max);
  ABV_REAL(control, override_torque);
  ABV_REAL(control, override_time);
  ABV_REAL(control, override_floor);
  ABV_REAL(control, ramp_time);
  ABV_REAL(control, release_torque);
  ABV_REAL(control, release_time);
  ABV_REAL(control, assist_deadband);
  ABV_REAL(control, pedal_gain);
  ABV_REAL(control, pedal_cap);
  ABV_REAL(control, eco_coast_decel);
  ABV_REAL(control, eco_lookahead);

  ABV_REAL(fuel, idle);
  ABV_REAL(fuel, air_density);
  ABV_REAL(fuel, drag_coeff);
  ABV_REAL(fuel, frontal_area);
  ABV_REAL(fuel, rolling);
  ABV_REAL(fuel, gravity);
  ABV_REAL(fuel, efficiency);
  ABV_REAL(fuel, lhv);

  ABV_REAL(idm, a_max);
  ABV_REAL(idm, b_comf);
  ABV_REAL(idm, s0);
  ABV_REAL(idm, time_gap);
  ABV_REAL(idm, delta);
  ABV_REAL(idm, accel_floor);

  ABV_REAL(supervisor, period);
  ABV_REAL(supervisor, jam_density);
  ABV_REAL(supervisor, dense_density);
  ABV_REAL(supervisor, jam_advice);
  ABV_REAL(supervisor, dense_advice);
  ABV_REAL(supervisor, ttl);

  ABV_REAL(sim, dt);
  ABV_REAL(sim, planner_period);
  ABV_REAL(sim, supervisor_period);

  for (auto& [key, entry] : table()) {
    entries_[key] = nullptr;
  }
}

#undef ABV_REAL
#undef ABV_INT

const ConfigRegistry& ConfigRegistry::instance() {
  static const ConfigRegistry registry;
  return registry;
}

void ConfigRegistry::set(Config& cfg, const std::string& key, double value) const {
  auto it = table().find(key);
  if (it == table().end()) throw std::invalid_argument("unknown config key: " + key);
  if (!std::isfinite(value)) throw std::invalid_argument("config key " + key + " must be finite");
  it->second.set(cfg, value);
}

double ConfigRegistry::get(const Config& cfg, const std::string& key) const {
  auto it = table().find(key);
  if (it == table().end()) throw std::invalid_argument("unknown config key: " + key);
  return it->second.get(cfg);
}

std::vector<std::string> ConfigRegistry::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [key, unused] : entries_) out.push_back(key);
  return out;
}

Config apply_overrides(Config base, const std::map<std::string, double>& overrides) {
  const auto& registry = ConfigRegistry::instance();
  for (const auto& [key, value] : overrides) registry.set(base, key, value);
  return base;
}

}  // namespace abv
