#pragma once

#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "abv/config.hpp"
#include "abv/geometry.hpp"
#include "abv/random.hpp"

namespace abv {

struct LaneObservation {
  bool valid = false;
  double lateral_offset = 0.0;   // from the centre of the occupied lane
  double heading_err = 0.0;
  double curvature_est = 0.0;
  double range_valid = 0.0;
};

/// Raw per-step lane sensing; valid with probability marking_quality.
LaneObservation sense_lanes(const VehicleState& ego, const RoadMap& map, Rng& rng,
                            const PerceptionParams& params = {});

/// Holds the last valid lane observation for the debounce window so a single
/// dropped frame does not invalidate lane sensing.
class LaneTracker {
 public:
  explicit LaneTracker(double debounce = 0.5) : debounce_(debounce) {}

  LaneObservation update(const LaneObservation& raw, double t);

 private:
  double debounce_;
  std::optional<LaneObservation> last_valid_;
  double last_valid_time_ = 0.0;
};

/// Localisation: truth plus exponentially smoothed sensor error.
class Localizer {
 public:
  explicit Localizer(const PerceptionParams& params = {}) : params_(params) {}

  VehicleState localize(const VehicleState& ego, Rng& rng);

 private:
  PerceptionParams params_;
  bool primed_ = false;
  double err_s_ = 0.0;
  double err_v_ = 0.0;
};

enum class Sensor { Camera, Laser, Radar };

struct Detection {
  Sensor sensor = Sensor::Laser;
  double rel_s = 0.0;
  double rel_d = 0.0;
  std::optional<double> rel_speed;  // laser only
  double timestamp = 0.0;
};

/// A stationary obstacle or any other object visible to the sensors.
struct SceneObject {
  double s = 0.0;
  double d = 0.0;
  double v = 0.0;
};

/// Object-level sensor model. `others` and `statics` together form the scene;
/// either may occlude the other.
std::vector<Detection> sense_objects(const VehicleState& ego, std::span<const SceneObject> others,
                                     std::span<const SceneObject> statics, const RoadMap& map, double t, Rng& rng,
                                     const PerceptionParams& params = {});

/// Short-range rear radar covering the ego's and adjacent lanes; the forward
/// suite above sees nothing behind the front axle.
std::vector<Detection> sense_rear(const VehicleState& ego, std::span<const SceneObject> others, const RoadMap& map,
                                  double t, Rng& rng, const PerceptionParams& params = {});

struct ObjectTrack {
  int id = 0;
  double s = 0.0;
  double d = 0.0;
  double v = 0.0;
  int hits = 0;
  int misses = 0;
  bool confirmed = false;
  std::set<Sensor> sources;
};

/// Where the ego was when the detections were taken; converts relative
/// detections into road coordinates. ring_length > 0 wraps s.
struct FusionFrame {
  double ego_s = 0.0;
  double ego_d = 0.0;
  double ego_v = 0.0;
  double ring_length = 0.0;
};

/// Greedy nearest-neighbour assignment inside the gate. Ties go to the
/// smaller distance, then the lower track id. Returns (track index, detection index).
std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const ObjectTrack> tracks,
                                                           std::span<const Detection> detections,
                                                           const FusionFrame& frame, double gate);

class TrackIdSource {
 public:
  int next() { return next_++; }

 private:
  int next_ = 1;
};

std::vector<ObjectTrack> fuse(std::vector<ObjectTrack> tracks, std::span<const Detection> detections, double dt,
                              TrackIdSource& ids, const FusionFrame& frame = {}, const FusionParams& params = {});

}  // namespace abv
