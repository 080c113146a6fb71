#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "abv/config.hpp"
#include "abv/geometry.hpp"
#include "abv/modes.hpp"
#include "abv/perception.hpp"
#include "abv/quintic.hpp"

namespace abv {

enum class ManeuverKind { KeepLane, Follow, Stop, ChangeLeft, ChangeRight, Mrs, EmergencyStop };
std::string_view to_string(ManeuverKind kind);

struct Maneuver {
  ManeuverKind kind = ManeuverKind::KeepLane;
  int target_lane = 0;
  double target_speed = 0.0;
  double horizon = 0.0;
  std::optional<double> target_gap;   // follow: desired end gap; stop: standstill gap
};

enum class Infeasibility { SpeedLimit, RoadBounds, Clearance, Accel, Jerk, LateralAccel, Heading };
std::string_view to_string(Infeasibility reason);

struct SpeedNode {
  double t = 0.0;
  double v = 0.0;
};

/// Quintic lateral offset d(t) plus a piecewise-linear speed profile v(t),
/// both in seconds since `t0`. Arc length is unwrapped from `s0`.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(Maneuver maneuver, Quintic<double> lateral, double lateral_duration, std::vector<SpeedNode> profile,
             double s0, double t0);

  const Maneuver& maneuver() const { return maneuver_; }
  const Quintic<double>& lateral() const { return lateral_; }
  double lateral_duration() const { return lateral_duration_; }
  const std::vector<SpeedNode>& speed_profile() const { return profile_; }
  double s0() const { return s0_; }
  double t0() const { return t0_; }
  double horizon() const { return profile_.empty() ? 0.0 : profile_.back().t; }

  double speed(double t) const;
  /// Acceleration of the profile segment containing t.
  double accel(double t) const;
  /// Unwrapped arc length at t.
  double distance(double t) const;
  double offset(double t) const;
  double offset_rate(double t) const;
  double offset_accel(double t) const;

  double cost = 0.0;
  bool feasible = true;
  std::set<Infeasibility> reasons;

 private:
  std::size_t node_before(double t) const;   // last node with node.t <= t, for front().t <= t < back().t

  Maneuver maneuver_;
  Quintic<double> lateral_;
  double lateral_duration_ = 0.0;
  std::vector<SpeedNode> profile_;
  std::vector<double> cumulative_;
  double node_dt_ = 0.0;   // spacing when the nodes are uniform, else 0
  double s0_ = 0.0;
  double t0_ = 0.0;
};

struct Prediction {
  int track_id = 0;
  double dt = 0.1;
  std::vector<double> s;   // unwrapped, same frame as the ego trajectory
  std::vector<double> d;
  std::vector<double> v;
  double length = 4.5;

  double s_at(double t) const;
  double d_at(double t) const;
  double v_at(double t) const;
};

/// Constant-speed lane keeping, capped at each segment's limit (legal drivers).
/// `origin` fixes the unwrap frame on ring roads; by default the track's own s.
std::vector<Prediction> predict_others(std::span<const ObjectTrack> tracks, const RoadMap& map, double horizon,
                                       double dt = 0.1, std::optional<double> origin = std::nullopt,
                                       double object_length = 4.5);

/// Effective speed limits: statutory limit, lowered by any live infrastructure advice.
class SpeedLimits {
 public:
  SpeedLimits() = default;
  explicit SpeedLimits(std::map<int, double> advised) : advised_(std::move(advised)) {}
  double at(const RoadMap& map, double s) const;
  double of(const RoadSegment& segment) const;
  const std::map<int, double>& advised() const { return advised_; }

 private:
  std::map<int, double> advised_;
};

struct PlanningContext {
  double t = 0.0;
  double desired_speed = kFullSystemSpeedMax;   // already capped by mode, TOR and eco advice
  SpeedLimits limits;
  bool allow_lane_change = true;
  bool allow_emergency_lane = false;
  std::optional<BoundaryState<double>> lateral_start;   // replaces the estimate's offset, rate and zero accel
};

/// Highest legal planning speed at s looking ahead for limit drops.
double speed_envelope(const RoadMap& map, const SpeedLimits& limits, double s, const PlannerParams& params,
                      double decel = 1.0);

std::vector<Trajectory> generate_candidates(const VehicleState& ego, std::span<const Prediction> predictions,
                                            const RoadMap& map, const PlanningContext& context,
                                            const PlannerParams& params = {}, const VehicleParams& vehicle = {});

struct LegalityResult {
  bool feasible = true;
  std::set<Infeasibility> reasons;
};

LegalityResult check_legal(const Trajectory& traj, const VehicleState& ego, std::span<const Prediction> predictions,
                           const RoadMap& map, const PlanningContext& context, const PlannerParams& params = {},
                           const VehicleParams& vehicle = {});

/// Cost terms are written into traj.cost.
double evaluate_cost(const Trajectory& traj, const VehicleState& ego, std::span<const Prediction> predictions,
                     const RoadMap& map, const PlanningContext& context, const PlannerParams& params = {},
                     const VehicleParams& vehicle = {});

/// Cheapest feasible candidate; nullopt tells the caller to fall back to MRS.
std::optional<Trajectory> select(std::span<const Trajectory> candidates);

Trajectory mrs_trajectory(const VehicleState& ego, const RoadMap& map, std::span<const Prediction> predictions,
                          double t0, const PlannerParams& params = {}, const VehicleParams& vehicle = {});

/// Replaces the speed profile with a maximum-deceleration stop, keeping the lateral plan.
Trajectory escalate_to_emergency(const Trajectory& traj, double t_on_traj, const VehicleState& ego,
                                 const PlannerParams& params = {}, const VehicleParams& vehicle = {});

/// Minimum bumper gap between the trajectory and same-lane predictions ahead.
double min_front_gap(const Trajectory& traj, std::span<const Prediction> predictions, const PlannerParams& params,
                     const VehicleParams& vehicle, double from_t = 0.0);

struct PlanResult {
  Trajectory nominal;
  Trajectory mrs;
  std::vector<Trajectory> candidates;
  bool fallback = false;   // nominal is the MRS
  bool healthy = true;     // false when planning itself failed
};

PlanResult plan(const VehicleState& ego, std::span<const ObjectTrack> tracks, const RoadMap& map, Mode mode,
                const PlanningContext& context, const PlannerParams& params = {}, const VehicleParams& vehicle = {});

}  // namespace abv
