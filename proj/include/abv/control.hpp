#pragma once

#include <optional>

#include "abv/config.hpp"
#include "abv/geometry.hpp"
#include "abv/modes.hpp"
#include "abv/planner.hpp"

namespace abv {

struct SteerCommand {
  double steer = 0.0;         // saturated total, rad
  double feedforward = 0.0;   // atan(L * kappa_path)
  double feedback = 0.0;      // -k_d e_d - k_psi e_psi, before saturation
};

/// Path-tracking steer for the trajectory sample at t_on_traj.
SteerCommand lateral_control(const VehicleState& ego, const Trajectory& traj, double t_on_traj, const RoadMap& map,
                             const ControlParams& params = {}, const VehicleParams& vehicle = {});

/// Bumper-to-bumper distance and speed of the vehicle ahead.
struct LeadGap {
  double gap = 0.0;
  double v = 0.0;
};

/// Speed tracking toward (v_ref, a_ref) combined with the constant-time-gap
/// law by taking the smaller demand. With `gap_only_when_close` the gap law
/// only engages inside the desired gap.
double longitudinal_control(double v, double v_ref, double a_ref, std::optional<LeadGap> lead,
                            const ControlParams& params = {}, const VehicleParams& vehicle = {},
                            bool gap_only_when_close = false);

double longitudinal_control(const VehicleState& ego, const Trajectory& traj, double t_on_traj,
                            std::optional<LeadGap> lead, const ControlParams& params = {},
                            const VehicleParams& vehicle = {});

struct SharedControlState {
  double assist_torque = 0.0;    // N·m after attenuation
  double driver_torque = 0.0;
  double applied_torque = 0.0;
  bool override_active = false;
  double override_timer = 0.0;   // s of sustained opposing torque
  double release_timer = 0.0;    // s of quiet hands while overridden
  double authority = 1.0;        // lambda
  double pedal_feedback = 0.0;   // N

  bool operator==(const SharedControlState&) const = default;
};

/// Self-aligning torque request for a steering feedback term.
double assist_torque_for(double feedback_steer, const ControlParams& params = {});

SharedControlState shared_torque(double assist_cmd, const DriverInput& driver, SharedControlState state, double dt,
                                 const ControlParams& params = {});

/// Advisory pedal resistance when the driver asks for more than recommended.
double pedal_feedback(double recommended_accel, double driver_throttle, const ControlParams& params = {},
                      const VehicleParams& vehicle = {});

double fuel_rate(double v, double a, double mass, const FuelParams& params = {});

struct FuelState {
  double rate = 0.0;         // g/s
  double cumulative = 0.0;   // g

  void update(double v, double a, double mass, double dt, const FuelParams& params = {});
};

/// Coast-down speed advice at s: the current limit, lowered wherever a lower
/// limit (or a stop, if `stop_ahead` is set) lies within the lookahead.
double eco_speed_advice(const RoadMap& map, const SpeedLimits& limits, double s,
                        std::optional<double> stop_ahead = std::nullopt, const ControlParams& params = {});

}  // namespace abv
