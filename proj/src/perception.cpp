#include "abv/perception.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace abv {

namespace {

double gaussian(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sigma);
  return dist(rng);
}

bool draw(Rng& rng, double probability) {
  if (probability <= 0.0) return false;
  if (probability >= 1.0) return true;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < probability;
}

double wrap_ring(double s, double ring) {
  if (ring <= 0.0) return s;
  s = std::fmod(s, ring);
  if (s < 0.0) s += ring;
  if (s >= ring) s = 0.0;
  return s;
}

double ring_delta(double from, double to, double ring) {
  double diff = to - from;
  if (ring <= 0.0) return diff;
  diff = std::fmod(diff, ring);
  if (diff >= 0.5 * ring) diff -= ring;
  if (diff < -0.5 * ring) diff += ring;
  return diff;
}

struct Measurement {
  double s;
  double d;
  std::optional<double> v;
};

Measurement to_road(const Detection& det, const FusionFrame& frame) {
  Measurement m{wrap_ring(frame.ego_s + det.rel_s, frame.ring_length), frame.ego_d + det.rel_d, std::nullopt};
  if (det.rel_speed) m.v = frame.ego_v + *det.rel_speed;
  return m;
}

double distance(const ObjectTrack& track, const Measurement& m, double ring) {
  return std::hypot(ring_delta(track.s, m.s, ring), m.d - track.d);
}

// Segment from the origin to `target` passes within `radius` of `occluder`.
bool blocks(double ts, double td, double os, double od, double radius) {
  const double len2 = ts * ts + td * td;
  if (len2 <= 0.0) return false;
  const double u = (os * ts + od * td) / len2;
  if (u <= 0.0 || u >= 1.0) return false;
  const double ps = u * ts - os;
  const double pd = u * td - od;
  return ps * ps + pd * pd < radius * radius;
}

}  // namespace

LaneObservation sense_lanes(const VehicleState& ego, const RoadMap& map, Rng& rng, const PerceptionParams& params) {
  const auto& seg = map.segment_clamped(ego.s);
  LaneObservation obs;
  if (!draw(rng, seg.marking_quality)) return obs;
  const int lane = map.lane_of(ego.s, ego.d);
  obs.valid = true;
  obs.lateral_offset = ego.d - lane * seg.lane_width + gaussian(rng, params.lane_sigma_d);
  obs.heading_err = ego.heading_err + gaussian(rng, params.lane_sigma_psi);
  obs.curvature_est = seg.curvature;
  obs.range_valid = params.lane_range;
  return obs;
}

LaneObservation LaneTracker::update(const LaneObservation& raw, double t) {
  if (raw.valid) {
    last_valid_ = raw;
    last_valid_time_ = t;
    return raw;
  }
  if (last_valid_ && t - last_valid_time_ < debounce_ - 1e-9) return *last_valid_;
  return LaneObservation{};
}

VehicleState Localizer::localize(const VehicleState& ego, Rng& rng) {
  const double raw_s = gaussian(rng, params_.loc_sigma_s);
  const double raw_v = gaussian(rng, params_.loc_sigma_v);
  if (!primed_) {
    err_s_ = raw_s;
    err_v_ = raw_v;
    primed_ = true;
  } else {
    const double alpha = params_.loc_alpha;
    err_s_ = alpha * raw_s + (1.0 - alpha) * err_s_;
    err_v_ = alpha * raw_v + (1.0 - alpha) * err_v_;
  }
  VehicleState estimate = ego;
  estimate.s = ego.s + err_s_;
  estimate.v = std::max(0.0, ego.v + err_v_);
  return estimate;
}

std::vector<Detection> sense_objects(const VehicleState& ego, std::span<const SceneObject> others,
                                     std::span<const SceneObject> statics, const RoadMap& map, double t, Rng& rng,
                                     const PerceptionParams& params) {
  struct Rel {
    double s, d, v;
  };
  std::vector<Rel> scene;
  scene.reserve(others.size() + statics.size());
  const double reach = std::max(params.laser_range, params.camera_range) + params.occlusion_radius;
  auto add = [&](const SceneObject& o) {
    const double rs = map.delta(ego.s, o.s);
    const double rd = o.d - ego.d;
    if (std::abs(rs) > reach) return;
    scene.push_back({rs, rd, o.v});
  };
  for (const auto& o : others) add(o);
  for (const auto& o : statics) add(o);

  std::vector<Detection> out;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& target = scene[i];
    if (target.s <= 0.0) continue;
    const double range = std::hypot(target.s, target.d);
    const double bearing = std::abs(wrap_angle(std::atan2(target.d, target.s) - ego.heading_err));
    const bool camera_sees = range <= params.camera_range && bearing <= params.camera_half_fov;
    const bool laser_sees = range <= params.laser_range && bearing <= params.laser_half_fov;
    if (!camera_sees && !laser_sees) continue;
    bool occluded = false;
    for (std::size_t j = 0; j < scene.size() && !occluded; ++j) {
      if (j == i) continue;
      occluded = blocks(target.s, target.d, scene[j].s, scene[j].d, params.occlusion_radius);
    }
    if (occluded) continue;
    if (camera_sees && !draw(rng, params.camera_miss)) {
      Detection det;
      det.sensor = Sensor::Camera;
      det.rel_s = target.s + gaussian(rng, params.camera_sigma);
      det.rel_d = target.d + gaussian(rng, params.camera_sigma);
      det.timestamp = t;
      out.push_back(det);
    }
    if (laser_sees && !draw(rng, params.laser_miss)) {
      Detection det;
      det.sensor = Sensor::Laser;
      det.rel_s = target.s + gaussian(rng, params.laser_sigma);
      det.rel_d = target.d + gaussian(rng, params.laser_sigma);
      det.rel_speed = target.v - ego.v + gaussian(rng, params.laser_speed_sigma);
      det.timestamp = t;
      out.push_back(det);
    }
  }
  return out;
}

std::vector<Detection> sense_rear(const VehicleState& ego, std::span<const SceneObject> others, const RoadMap& map,
                                  double t, Rng& rng, const PerceptionParams& params) {
  std::vector<Detection> out;
  for (const auto& o : others) {
    const double rs = map.delta(ego.s, o.s);
    const double rd = o.d - ego.d;
    if (rs > 0.0 || rs < -params.radar_range || std::abs(rd) > params.radar_half_width) continue;
    if (draw(rng, params.radar_miss)) continue;
    Detection det;
    det.sensor = Sensor::Radar;
    det.rel_s = rs + gaussian(rng, params.radar_sigma);
    det.rel_d = rd + gaussian(rng, params.radar_sigma);
    det.rel_speed = o.v - ego.v + gaussian(rng, params.radar_speed_sigma);
    det.timestamp = t;
    out.push_back(det);
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const ObjectTrack> tracks,
                                                           std::span<const Detection> detections,
                                                           const FusionFrame& frame, double gate) {
  std::vector<std::tuple<double, int, std::size_t, std::size_t>> pairs;
  for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
    for (std::size_t di = 0; di < detections.size(); ++di) {
      const double dist = distance(tracks[ti], to_road(detections[di], frame), frame.ring_length);
      if (dist <= gate) pairs.emplace_back(dist, tracks[ti].id, ti, di);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> track_used(tracks.size(), false);
  std::vector<bool> det_used(detections.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [dist, id, ti, di] : pairs) {
    if (track_used[ti] || det_used[di]) continue;
    track_used[ti] = true;
    det_used[di] = true;
    out.emplace_back(ti, di);
  }
  return out;
}

std::vector<ObjectTrack> fuse(std::vector<ObjectTrack> tracks, std::span<const Detection> detections, double dt,
                              TrackIdSource& ids, const FusionFrame& frame, const FusionParams& params) {
  const double ring = frame.ring_length;
  for (auto& track : tracks) track.s = wrap_ring(track.s + std::max(track.v, 0.0) * dt, ring);

  struct Matched {
    std::optional<Measurement> laser;
    std::optional<Measurement> camera;
    Sensor ranging = Sensor::Laser;
    bool spawned = false;
  };
  std::vector<Matched> matched(tracks.size());

  auto process = [&](Sensor sensor) {
    std::vector<Detection> subset;
    for (const auto& det : detections)
      if (det.sensor == sensor) subset.push_back(det);
    if (subset.empty()) return;
    std::vector<bool> used(subset.size(), false);
    for (auto [ti, di] : associate(tracks, subset, frame, params.gate)) {
      auto& slot = sensor == Sensor::Camera ? matched[ti].camera : matched[ti].laser;
      slot = to_road(subset[di], frame);
      if (sensor != Sensor::Camera) matched[ti].ranging = sensor;
      used[di] = true;
    }
    for (std::size_t di = 0; di < subset.size(); ++di) {
      if (used[di]) continue;
      const Measurement m = to_road(subset[di], frame);
      ObjectTrack fresh;
      fresh.id = ids.next();
      fresh.s = m.s;
      fresh.d = m.d;
      fresh.v = m.v.value_or(0.0);
      tracks.push_back(fresh);
      Matched entry;
      entry.spawned = true;
      entry.ranging = sensor;
      (sensor == Sensor::Camera ? entry.camera : entry.laser) = m;
      matched.push_back(entry);
    }
  };
  process(Sensor::Laser);
  process(Sensor::Radar);
  process(Sensor::Camera);

  const double w = params.measurement_weight;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    auto& track = tracks[i];
    const auto& m = matched[i];
    if (!m.laser && !m.camera) {
      ++track.misses;
      continue;
    }
    double ms, md;
    if (m.laser && m.camera) {
      const double share = params.laser_share;
      ms = wrap_ring(m.laser->s + (1.0 - share) * ring_delta(m.laser->s, m.camera->s, ring), ring);
      md = share * m.laser->d + (1.0 - share) * m.camera->d;
    } else {
      const auto& only = m.laser ? *m.laser : *m.camera;
      ms = only.s;
      md = only.d;
    }
    if (!m.spawned) {
      const double innovation = ring_delta(track.s, ms, ring);
      track.s = wrap_ring(track.s + w * innovation, ring);
      track.d = w * md + (1.0 - w) * track.d;
      if (m.laser && m.laser->v) {
        track.v = w * *m.laser->v + (1.0 - w) * track.v;
      } else if (dt > 0.0) {
        track.v = std::max(0.0, track.v + params.speed_gain * innovation / dt);
      }
    } else {
      track.s = ms;
      track.d = md;
    }
    ++track.hits;
    track.misses = 0;
    if (m.laser) track.sources.insert(m.ranging);
    if (m.camera) track.sources.insert(Sensor::Camera);
  }

  for (auto& track : tracks)
    if (track.hits >= params.confirm_hits) track.confirmed = true;
  std::erase_if(tracks, [&](const ObjectTrack& t) { return t.misses >= params.delete_misses; });

  // Duplicate suppression: the older track absorbs any track inside its gate.
  std::sort(tracks.begin(), tracks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<bool> dead(tracks.size(), false);
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    if (dead[i]) continue;
    for (std::size_t j = i + 1; j < tracks.size(); ++j) {
      if (dead[j]) continue;
      const double dist = std::hypot(ring_delta(tracks[i].s, tracks[j].s, ring), tracks[j].d - tracks[i].d);
      if (dist > params.gate) continue;
      tracks[i].hits = std::max(tracks[i].hits, tracks[j].hits);
      tracks[i].confirmed = tracks[i].confirmed || tracks[j].confirmed;
      tracks[i].sources.insert(tracks[j].sources.begin(), tracks[j].sources.end());
      dead[j] = true;
    }
  }
  std::vector<ObjectTrack> out;
  out.reserve(tracks.size());
  for (std::size_t i = 0; i < tracks.size(); ++i)
    if (!dead[i]) out.push_back(std::move(tracks[i]));
  return out;
}

}  // namespace abv
