#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "abv/config.hpp"

namespace abv {

/// Raised when the simulation would continue from a non-finite state.
class IntegrityFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfCorridor : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RoadSegment {
  int id = 0;
  double length = 100.0;           // m
  double curvature = 0.0;          // 1/m, positive turns left
  int lane_count = 1;
  double lane_width = 3.5;         // m
  double speed_limit = 13.89;      // m/s
  bool secured = false;
  bool has_emergency_lane = false;
  double marking_quality = 1.0;    // [0, 1]
  bool instrumented = false;       // static traffic counters present

  bool operator==(const RoadSegment&) const = default;
};

/// Problems with a segment, empty when it satisfies its invariants.
std::vector<std::string> validate(const RoadSegment& segment);

struct Pose2 {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;
};

/// Chained constant-curvature segments. Arc length s runs along the centre of
/// lane 0 (the rightmost lane); d is positive to the left, so lane i is
/// centred at d = i * lane_width and an emergency lane at d = -lane_width.
class RoadMap {
 public:
  RoadMap() = default;
  RoadMap(std::vector<RoadSegment> segments, bool closed);

  const std::vector<RoadSegment>& segments() const { return segments_; }
  bool closed() const { return closed_; }
  double total_length() const { return total_length_; }

  /// Left-closed segment lookup. Wraps on a ring, throws std::out_of_range on
  /// an open map outside [0, total_length).
  std::size_t segment_index(double s) const;
  const RoadSegment& segment_at(double s) const { return segments_[segment_index(s)]; }
  /// Like segment_at, but an open map extends its first/last segment.
  const RoadSegment& segment_clamped(double s) const;
  double segment_start(std::size_t index) const { return starts_[index]; }

  double wrap(double s) const;
  /// Shortest signed arc-length offset from `from` to `to` (wrap-aware).
  double delta(double from, double to) const;
  bool on_map(double s) const { return closed_ || (s >= 0.0 && s < total_length_); }

  Pose2 reference_pose(double s) const;

  /// Distance from s to the end of the secured stretch containing s; 0 when
  /// s is not on a secured segment, infinity on a fully secured ring.
  double distance_to_secured_end(double s) const;

  /// Lateral extent of the drivable lanes at s (centre-point bounds).
  double lane_center(double s, int lane) const { return lane * segment_clamped(s).lane_width; }
  int lane_of(double s, double d) const;

  bool operator==(const RoadMap& other) const {
    return closed_ == other.closed_ && segments_ == other.segments_;
  }

 private:
  std::vector<RoadSegment> segments_;
  std::vector<double> starts_;
  std::vector<Pose2> start_poses_;
  bool closed_ = false;
  double total_length_ = 0.0;
};

struct FrenetPose {
  double s = 0.0;
  double d = 0.0;
  double heading_err = 0.0;
};

struct VehicleState {
  double s = 0.0;
  double d = 0.0;
  double heading_err = 0.0;
  double v = 0.0;
  double a = 0.0;
  int lane = 0;
  double steer = 0.0;

  bool operator==(const VehicleState&) const = default;
};

struct Command {
  double steer = 0.0;   // commanded front-wheel angle, rad
  double accel = 0.0;   // commanded longitudinal acceleration, m/s^2
};

double wrap_angle(double angle);
double curvature_at(double s, const RoadMap& map);

/// Global position of the road point (s, d).
Pose2 frenet_to_global(double s, double d, const RoadMap& map);
FrenetPose global_to_frenet(double x, double y, double psi, const RoadMap& map);

/// One actuator-saturated, jerk-limited kinematic bicycle step integrated in
/// road coordinates. Pure: identical inputs give bit-identical outputs.
VehicleState step_vehicle(const VehicleState& state, const Command& cmd, double dt, const RoadMap& map,
                          const VehicleParams& params = {});

}  // namespace abv
