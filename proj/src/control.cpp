#include "abv/control.hpp"

#include <algorithm>
#include <cmath>

namespace abv {

SteerCommand lateral_control(const VehicleState& ego, const Trajectory& traj, double t_on_traj, const RoadMap& map,
                             const ControlParams& params, const VehicleParams& vehicle) {
  const double v = std::max(traj.speed(t_on_traj), 0.5);
  const double d_ref = traj.offset(t_on_traj);
  const double d_rate = traj.offset_rate(t_on_traj);
  const double d_accel = traj.offset_accel(t_on_traj);
  const double k_road = map.segment_clamped(ego.s).curvature;
  // Curvature of the offset path: road curvature seen at offset d plus the
  // lateral manoeuvre's own bending.
  const double kappa = k_road / (1.0 - k_road * d_ref) + d_accel / (v * v);
  const double heading_ref = std::atan2(d_rate, v);

  SteerCommand out;
  out.feedforward = std::atan(vehicle.wheelbase * kappa);
  const double e_d = ego.d - d_ref;
  const double e_psi = wrap_angle(ego.heading_err - heading_ref);
  out.feedback = -params.k_d * e_d - params.k_psi * e_psi;
  out.steer = std::clamp(out.feedforward + out.feedback, -vehicle.steer_max, vehicle.steer_max);
  return out;
}

double longitudinal_control(double v, double v_ref, double a_ref, std::optional<LeadGap> lead,
                            const ControlParams& params, const VehicleParams& vehicle, bool gap_only_when_close) {
  double accel = a_ref + params.k_v * (v_ref - v);
  if (lead) {
    const double desired = params.standstill_gap + params.time_gap * v;
    if (!gap_only_when_close || lead->gap < desired) {
      const double gap_term = params.gap_k * (lead->gap - desired) + params.gap_kv * (lead->v - v);
      accel = std::min(accel, gap_term);
    }
    // Kinematic floor: never close on the lead faster than a stop short of
    // the clearance floor allows.
    const double closing = v - lead->v;
    if (closing > 0.0) {
      const double room = std::max(lead->gap - params.min_gap - params.brake_preview * closing, 0.1);
      accel = std::min(accel, -closing * closing / (2.0 * room));
    }
  }
  return std::clamp(accel, vehicle.accel_min, vehicle.accel_max);
}

double longitudinal_control(const VehicleState& ego, const Trajectory& traj, double t_on_traj,
                            std::optional<LeadGap> lead, const ControlParams& params, const VehicleParams& vehicle) {
  return longitudinal_control(ego.v, traj.speed(t_on_traj), traj.accel(t_on_traj), lead, params, vehicle, true);
}

double assist_torque_for(double feedback_steer, const ControlParams& params) {
  return std::clamp(params.torque_per_rad * feedback_steer, -params.assist_max, params.assist_max);
}

SharedControlState shared_torque(double assist_cmd, const DriverInput& driver, SharedControlState state, double dt,
                                 const ControlParams& params) {
  const double assist = std::clamp(assist_cmd, -params.assist_max, params.assist_max);
  const double tau = driver.steer_torque;
  state.driver_torque = tau;

  const bool opposing = std::abs(assist) < params.assist_deadband || tau * assist < 0.0;
  if (std::abs(tau) > params.override_torque && opposing) {
    state.override_timer += dt;
  } else {
    state.override_timer = 0.0;
  }
  if (!state.override_active && state.override_timer > params.override_time + 1e-9) {
    state.override_active = true;
    state.release_timer = 0.0;
  }
  if (state.override_active) {
    state.release_timer = std::abs(tau) < params.release_torque ? state.release_timer + dt : 0.0;
    if (state.release_timer >= params.release_time - 1e-9) {
      state.override_active = false;
      state.release_timer = 0.0;
      state.override_timer = 0.0;
    }
  }

  const double rate = (1.0 - params.override_floor) / params.ramp_time;
  if (state.override_active) {
    state.authority = std::max(params.override_floor, state.authority - rate * dt);
  } else {
    state.authority = std::min(1.0, state.authority + rate * dt);
  }
  state.assist_torque = state.authority * assist;
  state.applied_torque = state.assist_torque + tau;
  return state;
}

double pedal_feedback(double recommended_accel, double driver_throttle, const ControlParams& params,
                      const VehicleParams& vehicle) {
  const double demand = std::clamp(driver_throttle, 0.0, 1.0) * vehicle.accel_max;
  const double excess = std::max(0.0, demand - recommended_accel);
  return std::min(params.pedal_cap, params.pedal_gain * excess / 2.0);
}

double fuel_rate(double v, double a, double mass, const FuelParams& p) {
  v = std::max(v, 0.0);
  const double force = mass * a + 0.5 * p.air_density * p.drag_coeff * p.frontal_area * v * v +
                       p.rolling * mass * p.gravity;
  const double power = std::max(0.0, force * v);
  return p.idle + power / (p.efficiency * p.lhv);
}

void FuelState::update(double v, double a, double mass, double dt, const FuelParams& params) {
  rate = fuel_rate(v, a, mass, params);
  cumulative += rate * dt;
}

double eco_speed_advice(const RoadMap& map, const SpeedLimits& limits, double s, std::optional<double> stop_ahead,
                        const ControlParams& params) {
  double advice = limits.at(map, s);
  const double coast = params.eco_coast_decel;
  const auto& segs = map.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    double ahead = map.segment_start(i) - map.wrap(s);
    if (map.closed() && ahead <= 0.0) ahead += map.total_length();
    if (ahead <= 0.0 || ahead > params.eco_lookahead) continue;
    const double v_next = limits.at(map, map.segment_start(i));
    advice = std::min(advice, std::sqrt(v_next * v_next + 2.0 * coast * ahead));
  }
  if (stop_ahead && *stop_ahead >= 0.0 && *stop_ahead <= params.eco_lookahead)
    advice = std::min(advice, std::sqrt(2.0 * coast * *stop_ahead));
  return advice;
}

}  // namespace abv
