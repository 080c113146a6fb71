#include "abv/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace abv {

namespace {

constexpr double kNodeDt = 0.1;
constexpr double kEnvelopePreview = 0.5;   // s
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kHeadingMax = 0.35;

int kind_rank(ManeuverKind kind) { return static_cast<int>(kind); }

/// Largest accel that still lets a jerk-limited ramp down to zero absorb a
/// speed error `error` without overshoot on the discrete grid.
double approach(double error, double jerk, double dt) {
  const double step = jerk * dt;
  const double mag = 0.5 * (-step + std::sqrt(step * step + 8.0 * jerk * std::abs(error)));
  return error >= 0.0 ? mag : -mag;
}

struct Bounds {
  double a_min;
  double a_max;
  double jerk;
};

using Policy = std::function<double(int k, double t, double s, double v)>;

std::vector<SpeedNode> rollout(double v0, double a0, double horizon, const Bounds& bounds, const Policy& policy) {
  std::vector<SpeedNode> nodes;
  const int steps = static_cast<int>(std::lround(horizon / kNodeDt));
  nodes.reserve(steps + 1);
  nodes.push_back({0.0, v0});
  double v = v0;
  double s = 0.0;
  double a_prev = v0 <= 0.0 ? std::max(a0, 0.0) : a0;
  const double max_da = bounds.jerk * kNodeDt;
  for (int k = 0; k < steps; ++k) {
    const double t = k * kNodeDt;
    double a = std::clamp(policy(k, t, s, v), bounds.a_min, bounds.a_max);
    a = std::clamp(a, a_prev - max_da, a_prev + max_da);
    double v_next = v + a * kNodeDt;
    if (v_next <= 0.0) {
      v_next = 0.0;
      a = v <= 0.0 ? 0.0 : -v / kNodeDt;
    }
    s += 0.5 * (v + v_next) * kNodeDt;
    v = v_next;
    a_prev = v <= 0.0 ? 0.0 : a;
    nodes.push_back({(k + 1) * kNodeDt, v});
  }
  return nodes;
}

/// Drops standstill nodes after the first one, but keeps at least `min_t` seconds.
void trim_after_stop(std::vector<SpeedNode>& nodes, double min_t) {
  while (nodes.size() > 2 && nodes[nodes.size() - 2].v <= 0.0 && nodes[nodes.size() - 2].t >= min_t - 1e-9)
    nodes.pop_back();
}

/// Deceleration that brings v to rest in `rem` metres; never below `floor`
/// so the approach does not creep.
double stopping_accel(double v, double rem, double cap, double floor = 0.5) {
  if (v <= 0.0) return 0.0;
  if (rem <= 0.05) return -cap;
  return -std::max(v * v / (2.0 * rem), floor);
}

int lane_count_ahead(const RoadMap& map, double s, double lookahead) {
  int lanes = map.segment_clamped(s).lane_count;
  for (double x = s; x <= s + lookahead; x += 10.0) {
    if (!map.closed() && x >= map.total_length()) break;
    lanes = std::min(lanes, map.segment_clamped(x).lane_count);
  }
  return lanes;
}

std::optional<std::size_t> lead_in_lane(std::span<const Prediction> preds, double ego_s, double lane_d,
                                        double lane_width, double lookahead) {
  std::optional<std::size_t> best;
  double best_gap = kInf;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    if (p.s.empty()) continue;
    const double ahead = p.s.front() - ego_s;
    if (ahead <= 0.0 || ahead > lookahead) continue;
    if (std::abs(p.d.front() - lane_d) >= 0.5 * lane_width) continue;
    if (ahead < best_gap) {
      best_gap = ahead;
      best = i;
    }
  }
  return best;
}

double lateral_rate0(const VehicleState& ego) { return ego.v * std::sin(ego.heading_err); }

}  // namespace

std::string_view to_string(ManeuverKind kind) {
  switch (kind) {
    case ManeuverKind::KeepLane: return "keep_lane";
    case ManeuverKind::Follow: return "follow";
    case ManeuverKind::Stop: return "stop";
    case ManeuverKind::ChangeLeft: return "change_left";
    case ManeuverKind::ChangeRight: return "change_right";
    case ManeuverKind::Mrs: return "mrs";
    case ManeuverKind::EmergencyStop: return "emergency_stop";
  }
  return "?";
}

std::string_view to_string(Infeasibility reason) {
  switch (reason) {
    case Infeasibility::SpeedLimit: return "speed_limit";
    case Infeasibility::RoadBounds: return "road_bounds";
    case Infeasibility::Clearance: return "clearance";
    case Infeasibility::Accel: return "accel";
    case Infeasibility::Jerk: return "jerk";
    case Infeasibility::LateralAccel: return "lateral_accel";
    case Infeasibility::Heading: return "heading";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Trajectory

Trajectory::Trajectory(Maneuver maneuver, Quintic<double> lateral, double lateral_duration,
                       std::vector<SpeedNode> profile, double s0, double t0)
    : maneuver_(maneuver),
      lateral_(std::move(lateral)),
      lateral_duration_(lateral_duration),
      profile_(std::move(profile)),
      s0_(s0),
      t0_(t0) {
  if (profile_.empty()) profile_.push_back({0.0, 0.0});
  cumulative_.resize(profile_.size(), 0.0);
  for (std::size_t i = 1; i < profile_.size(); ++i) {
    const double dt = profile_[i].t - profile_[i - 1].t;
    cumulative_[i] = cumulative_[i - 1] + 0.5 * (profile_[i].v + profile_[i - 1].v) * dt;
  }
  if (profile_.size() > 1) {
    node_dt_ = profile_[1].t - profile_[0].t;
    for (std::size_t i = 1; i < profile_.size() && node_dt_ > 0.0; ++i)
      if (std::abs(profile_[i].t - profile_[i - 1].t - node_dt_) > 1e-9) node_dt_ = 0.0;
  }
}

std::size_t Trajectory::node_before(double t) const {
  const std::size_t last = profile_.size() - 2;
  if (node_dt_ <= 0.0) {
    auto it = std::upper_bound(profile_.begin(), profile_.end(), t, [](double x, const SpeedNode& n) { return x < n.t; });
    return static_cast<std::size_t>(std::distance(profile_.begin(), it)) - 1;
  }
  std::size_t i = std::min(last, static_cast<std::size_t>(std::max(0.0, (t - profile_.front().t) / node_dt_)));
  while (i < last && profile_[i + 1].t <= t) ++i;
  while (i > 0 && profile_[i].t > t) --i;
  return i;
}

double Trajectory::speed(double t) const {
  if (t <= profile_.front().t) return profile_.front().v;
  if (t >= profile_.back().t) return profile_.back().v;
  const std::size_t i = node_before(t);
  const auto& a = profile_[i];
  const auto& b = profile_[i + 1];
  const double f = (t - a.t) / (b.t - a.t);
  return a.v + f * (b.v - a.v);
}

double Trajectory::accel(double t) const {
  if (profile_.size() < 2 || t >= profile_.back().t) return 0.0;
  if (t < profile_.front().t) t = profile_.front().t;
  const std::size_t i = node_before(t);
  const auto& a = profile_[i];
  const auto& b = profile_[i + 1];
  return (b.v - a.v) / (b.t - a.t);
}

double Trajectory::distance(double t) const {
  if (t <= profile_.front().t) return s0_;
  if (t >= profile_.back().t) return s0_ + cumulative_.back() + profile_.back().v * (t - profile_.back().t);
  const std::size_t i = node_before(t);
  const auto& a = profile_[i];
  const double acc = (profile_[i + 1].v - a.v) / (profile_[i + 1].t - a.t);
  const double tau = t - a.t;
  return s0_ + cumulative_[i] + a.v * tau + 0.5 * acc * tau * tau;
}

double Trajectory::offset(double t) const {
  return lateral_.position(std::clamp(t, 0.0, lateral_duration_));
}

double Trajectory::offset_rate(double t) const {
  if (t < 0.0 || t > lateral_duration_) return 0.0;
  return lateral_.velocity(t);
}

double Trajectory::offset_accel(double t) const {
  if (t < 0.0 || t > lateral_duration_) return 0.0;
  return lateral_.acceleration(t);
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

double sample(const std::vector<double>& xs, double dt, double t) {
  if (xs.empty()) return 0.0;
  if (t <= 0.0) return xs.front();
  const double pos = t / dt;
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= xs.size()) return xs.back();
  const double f = pos - static_cast<double>(i);
  return xs[i] + f * (xs[i + 1] - xs[i]);
}

}  // namespace

double Prediction::s_at(double t) const {
  if (!s.empty() && t > dt * static_cast<double>(s.size() - 1))
    return s.back() + v.back() * (t - dt * static_cast<double>(s.size() - 1));
  return sample(s, dt, t);
}
double Prediction::d_at(double t) const { return sample(d, dt, t); }
double Prediction::v_at(double t) const { return sample(v, dt, t); }

std::vector<Prediction> predict_others(std::span<const ObjectTrack> tracks, const RoadMap& map, double horizon,
                                       double dt, std::optional<double> origin, double object_length) {
  std::vector<Prediction> out;
  const int steps = static_cast<int>(std::lround(horizon / dt));
  for (const auto& track : tracks) {
    if (!track.confirmed) continue;
    Prediction p;
    p.track_id = track.id;
    p.dt = dt;
    p.length = object_length;
    const double start = origin ? *origin + map.delta(*origin, track.s) : track.s;
    const double v0 = std::max(track.v, 0.0);
    double s = start;
    auto capped = [&](double x) { return std::min(v0, map.segment_clamped(x).speed_limit); };
    p.s.push_back(s);
    p.d.push_back(track.d);
    p.v.push_back(capped(s));
    for (int k = 0; k < steps; ++k) {
      double remaining = dt;
      // Advance exactly through segment boundaries, re-capping at each.
      while (remaining > 0.0) {
        const double v = capped(s);
        if (v <= 0.0) break;
        double boundary = kInf;
        if (map.closed() || (s >= 0.0 && s < map.total_length())) {
          const std::size_t idx = map.segment_index(s);
          const double wrapped = map.wrap(s);
          boundary = s + (map.segment_start(idx) + map.segments()[idx].length - wrapped);
        }
        const double reach = v * remaining;
        if (s + reach < boundary) {
          s += reach;
          remaining = 0.0;
        } else {
          remaining -= (boundary - s) / v;
          s = boundary;
        }
      }
      p.s.push_back(s);
      p.d.push_back(track.d);
      p.v.push_back(capped(s));
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Limits

double SpeedLimits::at(const RoadMap& map, double s) const { return of(map.segment_clamped(s)); }

double SpeedLimits::of(const RoadSegment& segment) const {
  if (advised_.empty()) return segment.speed_limit;
  auto it = advised_.find(segment.id);
  return it == advised_.end() ? segment.speed_limit : std::min(segment.speed_limit, it->second);
}

double speed_envelope(const RoadMap& map, const SpeedLimits& limits, double s, const PlannerParams& params,
                      double decel) {
  double env = std::max(0.0, limits.at(map, s) - params.speed_margin);
  const auto& segs = map.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    double ahead = map.closed() ? map.delta(s, map.segment_start(i)) : map.segment_start(i) - s;
    if (map.closed() && ahead < 0.0) ahead += map.total_length();
    if (ahead <= 0.0 || ahead > params.lookahead + 100.0) continue;
    const double v_next = std::max(0.0, limits.of(segs[i]) - params.speed_margin);
    env = std::min(env, std::sqrt(v_next * v_next + 2.0 * decel * ahead));
  }
  return env;
}

// ---------------------------------------------------------------------------
// Candidate generation

std::vector<Trajectory> generate_candidates(const VehicleState& ego, std::span<const Prediction> predictions,
                                            const RoadMap& map, const PlanningContext& context,
                                            const PlannerParams& params, const VehicleParams& vehicle) {
  std::vector<Trajectory> out;
  if (!map.on_map(ego.s)) return out;
  const auto& seg = map.segment_clamped(ego.s);
  const double w = seg.lane_width;
  const double corridor = seg.lane_count * w + 5.0;
  if (std::abs(ego.d) > corridor || ego.d < -1.5 * w - 5.0) return out;

  const int lane = map.lane_of(ego.s, ego.d);
  const int lanes = lane_count_ahead(map, ego.s, params.lookahead);
  const Bounds bounds{-params.nominal_decel_max, params.nominal_accel_max, vehicle.jerk_max};
  const BoundaryState<double> lat0 = context.lateral_start.value_or(BoundaryState<double>{ego.d, lateral_rate0(ego), 0.0});
  const double s0 = ego.s;

  // The envelope is read ahead of the vehicle: jerk-limited tracking of a
  // falling target lags it by about decel^2 / (2 jerk).
  auto speed_target = [&](double base) {
    return [&, base](double s_rel, double v) {
      return std::min(base, speed_envelope(map, context.limits, s0 + s_rel + kEnvelopePreview * v, params));
    };
  };

  auto make = [&](Maneuver m, std::vector<SpeedNode> profile) {
    const double target_d = m.target_lane * w;
    auto lat = solve_quintic(lat0, BoundaryState<double>{target_d, 0.0, 0.0}, m.horizon);
    out.emplace_back(m, lat, m.horizon, std::move(profile), s0, context.t);
  };

  auto cruise = [&](ManeuverKind kind, int target_lane) {
    for (double T : params.horizons) {
      for (double off : params.speed_offsets) {
        const double base = std::max(0.0, context.desired_speed + off);
        auto target = speed_target(base);
        auto profile = rollout(ego.v, ego.a, T, bounds, [&](int, double, double s, double v) {
          return approach(target(s, v) - v, vehicle.jerk_max, kNodeDt);
        });
        make(Maneuver{kind, target_lane, base, T, std::nullopt}, std::move(profile));
      }
    }
  };

  auto follow = [&](ManeuverKind kind, int target_lane, const Prediction& lead) {
    for (double T : params.horizons) {
      for (double off : params.speed_offsets) {
        const double lead_v = lead.v.front();
        const double base = std::max(0.0, std::min(context.desired_speed, lead_v + off));
        auto target = speed_target(base);
        const double len = 0.5 * (vehicle.length + lead.length);
        auto profile = rollout(ego.v, ego.a, T, bounds, [&](int, double t, double s, double v) {
          const double gap = lead.s_at(t) - (s0 + s) - len;
          const double gap_des = std::max(params.time_gap * v, params.standstill_gap);
          const double a_gap = 0.25 * (gap - gap_des) + 0.5 * (lead.v_at(t) - v);
          return std::min(approach(target(s, v) - v, vehicle.jerk_max, kNodeDt), a_gap);
        });
        Maneuver m{kind, target_lane, base, T, params.time_gap * lead_v};
        make(m, std::move(profile));
      }
    }
  };

  auto stop = [&](int target_lane, const Prediction& obstacle) {
    const double len = 0.5 * (vehicle.length + obstacle.length);
    for (double T : params.horizons) {
      for (double margin : params.stop_margins) {
        const double standstill = params.standstill_gap + margin;
        const double stop_rel = obstacle.s.front() - s0 - len - standstill;
        auto target = speed_target(context.desired_speed);
        const Bounds stop_bounds{-params.emergency_decel, params.nominal_accel_max, vehicle.jerk_max};
        // The speed profile runs on to standstill even past the manoeuvre horizon.
        auto profile = rollout(ego.v, ego.a, std::max(T, 15.0), stop_bounds, [&](int, double, double s, double v) {
          const double a_speed = approach(target(s, v) - v, vehicle.jerk_max, kNodeDt);
          const double a_stop = stopping_accel(v, stop_rel - s - 0.3 * v, params.emergency_decel);
          return std::min(a_speed, a_stop);
        });
        trim_after_stop(profile, T);
        make(Maneuver{ManeuverKind::Stop, target_lane, 0.0, T, standstill}, std::move(profile));
      }
    }
  };

  auto plan_lane = [&](int target_lane, ManeuverKind cruise_kind, bool is_change) {
    const auto lead = lead_in_lane(predictions, s0, target_lane * w, w, params.lookahead);
    if (is_change) {
      if (lead && predictions[*lead].v.front() > params.stationary_speed) {
        follow(cruise_kind, target_lane, predictions[*lead]);
      } else {
        cruise(cruise_kind, target_lane);
      }
      return;
    }
    cruise(ManeuverKind::KeepLane, target_lane);
    if (!lead) return;
    if (predictions[*lead].v.front() > params.stationary_speed) {
      follow(ManeuverKind::Follow, target_lane, predictions[*lead]);
    } else {
      stop(target_lane, predictions[*lead]);
    }
  };

  plan_lane(lane, ManeuverKind::KeepLane, false);
  if (context.allow_lane_change) {
    if (lane + 1 < lanes) plan_lane(lane + 1, ManeuverKind::ChangeLeft, true);
    if (lane - 1 >= 0) plan_lane(lane - 1, ManeuverKind::ChangeRight, true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Legality and cost

namespace {

// Predictions whose lateral band meets the trajectory's and whose s-range
// comes within `reach` of it; the rest cannot matter at any node.
std::vector<std::size_t> relevant(const Trajectory& traj, std::span<const Prediction> predictions, double overlap,
                                  double reach, int steps) {
  double d_lo = kInf, d_hi = -kInf;
  for (int k = 0; k <= steps; ++k) {
    const double d = traj.offset(k * kNodeDt);
    d_lo = std::min(d_lo, d);
    d_hi = std::max(d_hi, d);
  }
  const double horizon = steps * kNodeDt;
  const double s_lo = traj.distance(0.0);
  const double s_hi = traj.distance(horizon);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const double pd0 = p.d_at(0.0), pd1 = p.d_at(horizon);
    if (std::min(pd0, pd1) - d_hi >= overlap || d_lo - std::max(pd0, pd1) >= overlap) continue;
    const double ps0 = p.s_at(0.0), ps1 = p.s_at(horizon);
    const double r = reach + 0.5 * p.length;
    if (std::min(ps0, ps1) - s_hi > r || s_lo - std::max(ps0, ps1) > r) continue;
    out.push_back(i);
  }
  return out;
}

constexpr double kSpeedBound = 25.0;   // m/s, above anything this simulator drives

}  // namespace

LegalityResult check_legal(const Trajectory& traj, const VehicleState& ego, std::span<const Prediction> predictions,
                           const RoadMap& map, const PlanningContext& context, const PlannerParams& params,
                           const VehicleParams& vehicle) {
  LegalityResult out;
  auto flag = [&](Infeasibility r) {
    out.feasible = false;
    out.reasons.insert(r);
  };
  const int steps = static_cast<int>(std::lround(traj.horizon() / kNodeDt));
  const double overlap = vehicle.width + 0.5;
  const double v_start = traj.speed(0.0);
  const double limit_start = context.limits.at(map, traj.s0());

  struct Guard {
    bool ahead0;
    bool in_lane0;
    double gap0;
  };
  std::vector<Guard> guards;
  guards.reserve(predictions.size());
  for (const auto& p : predictions) {
    const double ds = p.s_at(0.0) - traj.distance(0.0);
    const double gap = std::abs(ds) - 0.5 * (vehicle.length + p.length);
    guards.push_back({ds > 0.0, std::abs(p.d_at(0.0) - traj.offset(0.0)) < overlap, gap});
  }

  const auto near = relevant(traj, predictions, overlap,
                             0.5 * vehicle.length + std::max(params.clearance_floor, params.clearance_time * kSpeedBound),
                             steps);

  double a_prev = ego.a;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * kNodeDt;
    const double s = traj.distance(t);
    const double d = traj.offset(t);
    const double v = traj.speed(t);
    const auto& seg = map.segment_clamped(s);

    double limit = context.limits.at(map, s);
    if (v_start > limit_start) limit = std::max(limit, v_start - 2.0 * t);
    if (v > limit + 1e-9) flag(Infeasibility::SpeedLimit);

    const double w = seg.lane_width;
    const bool emergency_ok = context.allow_emergency_lane && seg.has_emergency_lane;
    const double d_min = emergency_ok ? -1.5 * w : -0.5 * w;
    const double d_max = (seg.lane_count - 0.5) * w;
    if (d < d_min - 1e-9 || d > d_max + 1e-9) flag(Infeasibility::RoadBounds);

    const double d_rate = traj.offset_rate(t);
    if (std::abs(d_rate) > std::tan(kHeadingMax) * v + 0.05) flag(Infeasibility::Heading);
    if (std::abs(seg.curvature * v * v + traj.offset_accel(t)) > params.lateral_accel_max + 1e-9)
      flag(Infeasibility::LateralAccel);

    if (k < steps) {
      const double a = traj.accel(t);
      const double v_next = traj.speed(t + kNodeDt);
      if (a < vehicle.accel_min - 1e-9 || a > vehicle.accel_max + 1e-9) flag(Infeasibility::Accel);
      const bool stopping = v_next <= 0.0 || v <= 0.0;
      if (!stopping && std::abs(a - a_prev) > vehicle.jerk_max * kNodeDt + 1e-9) flag(Infeasibility::Jerk);
      a_prev = stopping ? 0.0 : a;
    }

    for (std::size_t i : near) {
      const auto& p = predictions[i];
      const double pd = p.d_at(t);
      if (std::abs(pd - d) >= overlap) continue;
      const double ds = p.s_at(t) - s;
      const double gap = std::abs(ds) - 0.5 * (vehicle.length + p.length);
      double required;
      if (ds >= 0.0) {
        required = std::max(params.clearance_floor, params.clearance_time * v);
      } else {
        if (guards[i].in_lane0) continue;   // followers already behind us are their own responsibility
        required = std::max(params.clearance_floor, params.clearance_time * p.v_at(t));
      }
      if (guards[i].in_lane0 && guards[i].ahead0 == (ds >= 0.0) && guards[i].gap0 < required)
        required = std::max(std::min(required, guards[i].gap0), 0.0);
      if (gap < required - 1e-9) flag(Infeasibility::Clearance);
    }
  }
  return out;
}

double evaluate_cost(const Trajectory& traj, const VehicleState& ego, std::span<const Prediction> predictions,
                     const RoadMap& map, const PlanningContext& context, const PlannerParams& params,
                     const VehicleParams& vehicle) {
  const int steps = static_cast<int>(std::lround(traj.horizon() / kNodeDt));
  const double overlap = vehicle.width + 0.5;
  double speed_err = 0.0;
  double long_jerk = 0.0;
  double min_ttc = kInf;
  const auto near = relevant(traj, predictions, overlap, 0.5 * vehicle.length + kSpeedBound * params.ttc_horizon, steps);
  double a_prev = ego.a;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * kNodeDt;
    const double v = traj.speed(t);
    speed_err += (v - context.desired_speed) * (v - context.desired_speed);
    if (k < steps) {
      const double a = traj.accel(t);
      const double j = (a - a_prev) / kNodeDt;
      long_jerk += j * j * kNodeDt;
      a_prev = a;
    }
    const double s = traj.distance(t);
    const double d = traj.offset(t);
    for (std::size_t i : near) {
      const auto& p = predictions[i];
      if (std::abs(p.d_at(t) - d) >= overlap) continue;
      const double ds = p.s_at(t) - s;
      if (ds <= 0.0) continue;
      const double closing = v - p.v_at(t);
      if (closing <= 0.0) continue;
      const double gap = std::max(ds - 0.5 * (vehicle.length + p.length), 1e-3);
      min_ttc = std::min(min_ttc, gap / closing);
    }
  }
  speed_err /= static_cast<double>(steps + 1);
  const double lat_jerk = traj.lateral().jerk_energy(std::min(traj.lateral_duration(), std::max(traj.horizon(), 0.0)));
  const bool lane_change = traj.maneuver().target_lane != map.lane_of(ego.s, ego.d);
  double cost = params.w_speed * speed_err + params.w_jerk * (lat_jerk + long_jerk) +
                params.w_lane_change * (lane_change ? 1.0 : 0.0);
  if (min_ttc < params.ttc_horizon) cost += params.w_ttc / min_ttc;
  return cost;
}

std::optional<Trajectory> select(std::span<const Trajectory> candidates) {
  const Trajectory* best = nullptr;
  for (const auto& c : candidates) {
    if (!c.feasible) continue;
    if (!best) {
      best = &c;
      continue;
    }
    const auto key = [](const Trajectory& t) {
      return std::make_tuple(t.cost, kind_rank(t.maneuver().kind), t.maneuver().horizon);
    };
    if (key(c) < key(*best)) best = &c;
  }
  if (!best) return std::nullopt;
  return *best;
}

// ---------------------------------------------------------------------------
// Minimum-risk and emergency trajectories

double min_front_gap(const Trajectory& traj, std::span<const Prediction> predictions, const PlannerParams&,
                     const VehicleParams& vehicle, double from_t) {
  const double overlap = vehicle.width + 0.5;
  double best = kInf;
  const double end = std::max(traj.horizon(), from_t);
  for (double t = from_t; t <= end + 1e-9; t += kNodeDt) {
    const double s = traj.distance(t);
    const double d = traj.offset(t);
    for (const auto& p : predictions) {
      if (std::abs(p.d_at(t) - d) >= overlap) continue;
      const double ds = p.s_at(t) - s;
      if (ds < -0.5 * (vehicle.length + p.length)) continue;
      best = std::min(best, ds - 0.5 * (vehicle.length + p.length));
    }
  }
  return best;
}

namespace {

std::vector<SpeedNode> stop_profile(double v0, double a0, double stop_distance, double hold, double decel_cap,
                                    double jerk, double extra = 0.0) {
  // Cruise for `hold` seconds, then brake so the vehicle stops `stop_distance`
  // metres after the hold phase ends.
  const double horizon = hold + (v0 > 0.0 ? 4.0 * stop_distance / std::max(v0, 0.1) : 0.0) + 5.0 + extra;
  double stop_at = -1.0;
  const Bounds bounds{-decel_cap, 0.0, jerk};
  auto nodes = rollout(v0, a0, horizon, bounds, [&](int, double t, double s, double v) {
    if (t < hold - 1e-9) return approach(v0 - v, jerk, kNodeDt);
    if (stop_at < 0.0) stop_at = s + stop_distance;
    return stopping_accel(v, stop_at - s - 0.3 * v, decel_cap);
  });
  trim_after_stop(nodes, 0.0);
  return nodes;
}

}  // namespace

Trajectory mrs_trajectory(const VehicleState& ego, const RoadMap& map, std::span<const Prediction> predictions,
                          double t0, const PlannerParams& params, const VehicleParams& vehicle) {
  const auto& seg = map.segment_clamped(ego.s);
  const double w = seg.lane_width;
  if (ego.v <= 0.0) {
    Quintic<double> hold(Vector6<double>{ego.d, 0, 0, 0, 0, 0});
    return Trajectory(Maneuver{ManeuverKind::Mrs, map.lane_of(ego.s, ego.d), 0.0, 0.0, std::nullopt}, hold, 0.0,
                      {{0.0, 0.0}}, ego.s, t0);
  }
  const BoundaryState<double> lat0{ego.d, lateral_rate0(ego), 0.0};

  bool use_emergency_lane = false;
  double target_d = map.lane_of(ego.s, ego.d) * w;
  double lateral_time = 3.0;
  double hold = 0.0;
  double decel = params.mrs_decel_in_lane;
  int target_lane = map.lane_of(ego.s, ego.d);
  if (seg.secured && seg.has_emergency_lane) {
    const double shift = std::abs(-w - ego.d);
    lateral_time = std::max(3.0, 8.0 * shift / std::max(ego.v, 1.0));
    const double need = ego.v * 0.7 * lateral_time + ego.v * ego.v / (2.0 * params.mrs_decel_emergency_lane) + 5.0;
    // The emergency lane has to continue for the whole manoeuvre.
    bool lane_ok = true;
    for (double x = ego.s; x <= ego.s + need; x += 5.0) {
      if (!map.closed() && x >= map.total_length()) {
        lane_ok = false;
        break;
      }
      const auto& ahead = map.segment_clamped(x);
      if (!ahead.has_emergency_lane || !ahead.secured) {
        lane_ok = false;
        break;
      }
    }
    if (lane_ok) {
      use_emergency_lane = true;
      target_d = -w;
      target_lane = -1;
      hold = 0.7 * lateral_time;
      decel = params.mrs_decel_emergency_lane;
    }
  }
  if (!use_emergency_lane) lateral_time = std::max(1.0, std::min(3.0, ego.v / decel));

  const double stop_distance = ego.v * ego.v / (2.0 * decel);
  auto lat = solve_quintic(lat0, BoundaryState<double>{target_d, 0.0, 0.0}, lateral_time);
  auto profile = stop_profile(ego.v, ego.a, stop_distance, hold, params.emergency_decel, vehicle.jerk_max);
  const double horizon = profile.back().t;
  Trajectory traj(Maneuver{ManeuverKind::Mrs, target_lane, 0.0, horizon, std::nullopt}, lat, lateral_time,
                  std::move(profile), ego.s, t0);

  if (min_front_gap(traj, predictions, params, vehicle) < params.clearance_floor) {
    return escalate_to_emergency(traj, 0.0, ego, params, vehicle);
  }
  return traj;
}

Trajectory escalate_to_emergency(const Trajectory& traj, double t_on_traj, const VehicleState& ego,
                                 const PlannerParams& params, const VehicleParams& vehicle) {
  const double remaining = std::max(1.0, traj.lateral_duration() - t_on_traj);
  const double target_d = traj.offset(traj.lateral_duration());
  const BoundaryState<double> lat0{ego.d, lateral_rate0(ego), 0.0};
  auto lat = solve_quintic(lat0, BoundaryState<double>{target_d, 0.0, 0.0}, remaining);
  const Bounds bounds{-params.emergency_decel, 0.0, vehicle.jerk_max};
  const double horizon = ego.v / params.emergency_decel + 2.0;
  auto profile = rollout(ego.v, ego.a, horizon, bounds, [&](int, double, double, double) {
    return -params.emergency_decel;
  });
  trim_after_stop(profile, 0.0);
  const double stop_time = profile.back().t;
  Maneuver m{ManeuverKind::EmergencyStop, traj.maneuver().target_lane, 0.0, stop_time, std::nullopt};
  return Trajectory(m, lat, remaining, std::move(profile), ego.s, traj.t0() + t_on_traj);
}

// ---------------------------------------------------------------------------

PlanResult plan(const VehicleState& ego, std::span<const ObjectTrack> tracks, const RoadMap& map, Mode mode,
                const PlanningContext& context, const PlannerParams& params, const VehicleParams& vehicle) {
  PlanResult out;
  std::vector<ObjectTrack> nearby;
  for (const auto& t : tracks) {
    if (!t.confirmed) continue;
    if (std::abs(map.delta(ego.s, t.s)) > params.lookahead + 20.0) continue;
    nearby.push_back(t);
  }
  const double horizon = *std::max_element(params.horizons.begin(), params.horizons.end());
  std::vector<Prediction> preds;
  try {
    preds = predict_others(nearby, map, horizon + 10.0, kNodeDt, ego.s, vehicle.length);
  } catch (const std::exception&) {
    out.healthy = false;
  }

  PlanningContext ctx = context;
  ctx.allow_emergency_lane = ctx.allow_emergency_lane || mode == Mode::Emergency;
  try {
    out.mrs = mrs_trajectory(ego, map, preds, context.t, params, vehicle);
  } catch (const std::exception&) {
    out.healthy = false;
    std::vector<SpeedNode> nodes{{0.0, ego.v}, {ego.v / params.emergency_decel + 0.1, 0.0}};
    Quintic<double> hold(Vector6<double>{ego.d, 0, 0, 0, 0, 0});
    out.mrs = Trajectory(Maneuver{ManeuverKind::EmergencyStop, ego.lane, 0.0, nodes.back().t, std::nullopt}, hold,
                         0.0, nodes, ego.s, context.t);
  }
  if (!out.healthy) {
    out.nominal = out.mrs;
    out.fallback = true;
    return out;
  }

  try {
    out.candidates = generate_candidates(ego, preds, map, ctx, params, vehicle);
    for (auto& c : out.candidates) {
      auto legal = check_legal(c, ego, preds, map, ctx, params, vehicle);
      c.feasible = legal.feasible;
      c.reasons = std::move(legal.reasons);
      c.cost = c.feasible ? evaluate_cost(c, ego, preds, map, ctx, params, vehicle) : kInf;
    }
    if (auto best = select(out.candidates)) {
      out.nominal = *best;
    } else {
      out.nominal = out.mrs;
      out.fallback = true;
    }
  } catch (const std::exception&) {
    out.nominal = out.mrs;
    out.fallback = true;
    out.healthy = false;
  }
  return out;
}

}  // namespace abv
