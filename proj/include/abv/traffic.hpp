#pragma once

#include <map>
#include <optional>
#include <vector>

#include "abv/config.hpp"
#include "abv/geometry.hpp"
#include "abv/random.hpp"

namespace abv {

struct IdmResult {
  double accel = 0.0;
  bool collision = false;   // gap <= 0
};

/// Intelligent Driver Model. `gap` is bumper to bumper; pass infinity for a free road.
IdmResult idm_accel(double v, double v_lead, double gap, double desired_speed, const IdmParams& params = {});

/// Speed at which an IDM follower is in equilibrium behind an equal-speed leader.
double idm_equilibrium_speed(double gap, double desired_speed, const IdmParams& params = {});

struct VehicleReport {
  int vehicle_id = 0;
  int segment_id = 0;
  double v = 0.0;
  bool abv = false;   // ABV vehicles report themselves; others need roadside counters
};

struct Recommendation {
  int segment_id = 0;
  double advised_limit = 0.0;
  double issued_at = 0.0;
  double ttl = 10.0;

  bool live(double t) const { return t < issued_at + ttl; }
  bool operator==(const Recommendation&) const = default;
};

/// Vehicles per km per lane seen by the infrastructure on each segment id.
std::map<int, double> observed_density(const std::vector<VehicleReport>& reports, const RoadMap& map);

/// Recommendations issued for this snapshot.
std::vector<Recommendation> supervisor_step(const std::vector<VehicleReport>& reports, const RoadMap& map, double t,
                                            const SupervisorParams& params = {});

/// Keeps recommendations alive until their ttl runs out; a fresh one for the
/// same segment replaces the old.
class Supervisor {
 public:
  explicit Supervisor(SupervisorParams params = {}) : params_(params) {}

  const std::vector<Recommendation>& step(const std::vector<VehicleReport>& reports, const RoadMap& map, double t);
  const std::vector<Recommendation>& active() const { return active_; }
  /// segment id -> advised limit, for the live recommendations at t.
  std::map<int, double> advised(double t) const;

 private:
  SupervisorParams params_;
  std::vector<Recommendation> active_;
};

struct TrafficSpec {
  double density = 0.0;     // veh/km/lane; used when count == 0
  int count = 0;
  double penetration = 0.0;
  double speed_factor_min = 0.9;   // desired speed as a fraction of the limit
  double speed_factor_max = 1.1;
  double region_start = 0.0;
  double region_end = -1.0;        // < 0: to the end of the road
  double length = 4.5;

  bool operator==(const TrafficSpec&) const = default;
};

struct SpawnedVehicle {
  int id = 0;
  bool abv = false;
  VehicleState state;
  double desired_speed = 0.0;
};

/// A spot to keep free of spawned traffic (the scripted ego, an obstacle).
struct Reserved {
  double s = 0.0;
  int lane = 0;
  double behind = 20.0;
  double ahead = 40.0;
};

/// Evenly spaced, IDM-stable fleet. Throws std::invalid_argument when the
/// requested density cannot fit.
std::vector<SpawnedVehicle> spawn_traffic(const TrafficSpec& spec, const RoadMap& map, Rng& rng,
                                          const std::vector<Reserved>& reserved = {}, const IdmParams& idm = {});

}  // namespace abv
