#include "abv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace abv {

namespace {

constexpr double kStraight = 1e-12;

Eigen::Vector2d left_normal(double heading) { return {-std::sin(heading), std::cos(heading)}; }

bool finite_state(const VehicleState& x) {
  return std::isfinite(x.s) && std::isfinite(x.d) && std::isfinite(x.heading_err) && std::isfinite(x.v) &&
         std::isfinite(x.a) && std::isfinite(x.steer);
}

Pose2 advance(const Pose2& start, double curvature, double u) {
  Pose2 out;
  if (std::abs(curvature) < kStraight) {
    out.position = start.position + u * Eigen::Vector2d(std::cos(start.heading), std::sin(start.heading));
    out.heading = start.heading;
    return out;
  }
  const double heading = start.heading + curvature * u;
  out.position = start.position + Eigen::Vector2d(std::sin(heading) - std::sin(start.heading),
                                                   std::cos(start.heading) - std::cos(heading)) /
                                      curvature;
  out.heading = heading;
  return out;
}

}  // namespace

double wrap_angle(double angle) {
  angle = std::fmod(angle + kPi, 2.0 * kPi);
  if (angle < 0.0) angle += 2.0 * kPi;
  return angle - kPi;
}

std::vector<std::string> validate(const RoadSegment& seg) {
  std::vector<std::string> problems;
  const std::string where = "segment " + std::to_string(seg.id) + ": ";
  if (!(seg.length > 0.0)) problems.push_back(where + "length must be > 0");
  if (seg.lane_count < 1) problems.push_back(where + "lane_count must be >= 1");
  if (!(seg.lane_width > 0.0)) problems.push_back(where + "lane_width must be > 0");
  if (!(seg.speed_limit > 0.0)) problems.push_back(where + "speed_limit must be > 0");
  if (!std::isfinite(seg.curvature)) problems.push_back(where + "curvature must be finite");
  if (!(seg.marking_quality >= 0.0 && seg.marking_quality <= 1.0))
    problems.push_back(where + "marking_quality must lie in [0, 1]");
  const double lanes = seg.lane_count + (seg.has_emergency_lane ? 1 : 0);
  if (std::abs(seg.curvature) * lanes * seg.lane_width >= 1.0)
    problems.push_back(where + "|curvature| * lane_count * lane_width must be < 1");
  return problems;
}

RoadMap::RoadMap(std::vector<RoadSegment> segments, bool closed) : segments_(std::move(segments)), closed_(closed) {
  std::vector<std::string> problems;
  if (segments_.empty()) problems.emplace_back("road map needs at least one segment");
  for (const auto& seg : segments_) {
    auto p = validate(seg);
    problems.insert(problems.end(), p.begin(), p.end());
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    for (std::size_t i = 0; i < problems.size(); ++i) msg << (i ? "; " : "") << problems[i];
    throw std::invalid_argument(msg.str());
  }
  Pose2 pose;
  double s = 0.0;
  for (const auto& seg : segments_) {
    starts_.push_back(s);
    start_poses_.push_back(pose);
    pose = advance(pose, seg.curvature, seg.length);
    s += seg.length;
  }
  total_length_ = s;
}

double RoadMap::wrap(double s) const {
  if (!closed_) return s;
  double w = std::fmod(s, total_length_);
  if (w < 0.0) w += total_length_;
  if (w >= total_length_) w = 0.0;
  return w;
}

double RoadMap::delta(double from, double to) const {
  double diff = to - from;
  if (!closed_) return diff;
  diff = std::fmod(diff, total_length_);
  if (diff >= 0.5 * total_length_) diff -= total_length_;
  if (diff < -0.5 * total_length_) diff += total_length_;
  return diff;
}

std::size_t RoadMap::segment_index(double s) const {
  if (closed_) {
    s = wrap(s);
  } else if (!(s >= 0.0 && s < total_length_)) {
    throw std::out_of_range("arc length " + std::to_string(s) + " is outside the open road [0, " +
                            std::to_string(total_length_) + ")");
  }
  if (starts_.size() <= 8) {
    std::size_t i = starts_.size() - 1;
    while (i > 0 && starts_[i] > s) --i;
    return i;
  }
  auto it = std::upper_bound(starts_.begin(), starts_.end(), s);
  return static_cast<std::size_t>(std::distance(starts_.begin(), it)) - 1;
}

const RoadSegment& RoadMap::segment_clamped(double s) const {
  if (closed_) return segments_[segment_index(s)];
  if (s < 0.0) return segments_.front();
  if (s >= total_length_) return segments_.back();
  return segments_[segment_index(s)];
}

Pose2 RoadMap::reference_pose(double s) const {
  std::size_t i;
  if (closed_) {
    s = wrap(s);
    i = segment_index(s);
  } else if (s < 0.0) {
    i = 0;
  } else if (s >= total_length_) {
    i = segments_.size() - 1;
  } else {
    i = segment_index(s);
  }
  return advance(start_poses_[i], segments_[i].curvature, s - starts_[i]);
}

double RoadMap::distance_to_secured_end(double s) const {
  if (!on_map(s)) return 0.0;
  std::size_t i = segment_index(s);
  if (!segments_[i].secured) return 0.0;
  double dist = starts_[i] + segments_[i].length - wrap(s);
  const std::size_t n = segments_.size();
  for (std::size_t k = 1; k < n; ++k) {
    std::size_t j = i + k;
    if (j >= n) {
      if (!closed_) return dist;
      j -= n;
    }
    if (!segments_[j].secured) return dist;
    dist += segments_[j].length;
  }
  return closed_ ? std::numeric_limits<double>::infinity() : dist;
}

int RoadMap::lane_of(double s, double d) const {
  const auto& seg = segment_clamped(s);
  const int lane = static_cast<int>(std::lround(d / seg.lane_width));
  return std::clamp(lane, 0, seg.lane_count - 1);
}

double curvature_at(double s, const RoadMap& map) { return map.segment_at(s).curvature; }

Pose2 frenet_to_global(double s, double d, const RoadMap& map) {
  Pose2 ref = map.reference_pose(s);
  ref.position += d * left_normal(ref.heading);
  return ref;
}

FrenetPose global_to_frenet(double x, double y, double psi, const RoadMap& map) {
  const Eigen::Vector2d p(x, y);
  constexpr double eps = 1e-9;
  bool found = false;
  FrenetPose best;
  double best_abs_d = std::numeric_limits<double>::infinity();
  double best_ref_heading = 0.0;

  const auto& segs = map.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& seg = segs[i];
    const Pose2 start = map.reference_pose(map.segment_start(i));
    double u = 0.0;
    double d = 0.0;
    if (std::abs(seg.curvature) < kStraight) {
      const Eigen::Vector2d t(std::cos(start.heading), std::sin(start.heading));
      const Eigen::Vector2d rel = p - start.position;
      u = rel.dot(t);
      d = rel.dot(left_normal(start.heading));
    } else {
      const double k = seg.curvature;
      const double sign = k > 0.0 ? 1.0 : -1.0;
      const double radius = 1.0 / std::abs(k);
      const Eigen::Vector2d center = start.position + left_normal(start.heading) / k;
      const Eigen::Vector2d r = p - center;
      const double dist = r.norm();
      if (dist < 1e-12) continue;
      const double ray = std::atan2(r.y(), r.x());
      const double tangent = ray + sign * 0.5 * kPi;
      const double sweep = std::abs(k) * seg.length;
      double turned = sign * (tangent - start.heading);
      // Centre the ambiguity window on the middle of the arc.
      turned = 0.5 * sweep + wrap_angle(turned - 0.5 * sweep);
      u = turned * radius;
      d = sign * (radius - dist);
    }
    if (u < -eps || u > seg.length + eps) continue;
    if (std::abs(d) < best_abs_d) {
      best_abs_d = std::abs(d);
      best.s = map.segment_start(i) + std::clamp(u, 0.0, seg.length);
      best.d = d;
      best_ref_heading = map.reference_pose(best.s).heading;
      found = true;
    }
  }
  if (!found) throw OutOfCorridor("point (" + std::to_string(x) + ", " + std::to_string(y) + ") has no foot on the road");
  const auto& seg = map.segment_clamped(best.s);
  const double corridor = seg.lane_count * seg.lane_width + 5.0;
  if (std::abs(best.d) > corridor)
    throw OutOfCorridor("point is " + std::to_string(best.d) + " m from the reference line (corridor " +
                        std::to_string(corridor) + " m)");
  best.s = map.wrap(best.s);
  if (map.closed() && best.s >= map.total_length()) best.s = 0.0;
  best.heading_err = wrap_angle(psi - best_ref_heading);
  return best;
}

VehicleState step_vehicle(const VehicleState& state, const Command& cmd, double dt, const RoadMap& map,
                          const VehicleParams& params) {
  if (!finite_state(state) || !std::isfinite(cmd.steer) || !std::isfinite(cmd.accel))
    throw IntegrityFault("step_vehicle: non-finite state or command");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw IntegrityFault("step_vehicle: dt must be a positive finite value");

  VehicleState next = state;

  const double steer_target = std::clamp(cmd.steer, -params.steer_max, params.steer_max);
  const double max_dsteer = params.steer_rate_max * dt;
  next.steer = std::clamp(state.steer + std::clamp(steer_target - state.steer, -max_dsteer, max_dsteer),
                          -params.steer_max, params.steer_max);

  const double accel_target = std::clamp(cmd.accel, params.accel_min, params.accel_max);
  const double max_da = params.jerk_max * dt;
  double a = state.a + std::clamp(accel_target - state.a, -max_da, max_da);

  double travel = 0.0;
  const double v0 = std::max(state.v, 0.0);
  if (v0 <= 0.0 && a < 0.0) {
    a = 0.0;
    next.v = 0.0;
  } else if (v0 + a * dt >= 0.0) {
    travel = v0 * dt + 0.5 * a * dt * dt;
    next.v = v0 + a * dt;
  } else {
    travel = v0 * v0 / (2.0 * -a);
    next.v = 0.0;
    a = 0.0;
  }
  next.a = a;

  if (travel > 0.0) {
    const double path_curvature = std::tan(next.steer) / params.wheelbase;
    auto deriv = [&](double s, double d, double psi, double out[3]) {
      const double k = map.segment_clamped(s).curvature;
      const double ds = std::cos(psi) / (1.0 - k * d);
      out[0] = ds;
      out[1] = std::sin(psi);
      out[2] = path_curvature - k * ds;
    };
    const double h = travel;
    double k1[3], k2[3], k3[3], k4[3];
    deriv(state.s, state.d, state.heading_err, k1);
    deriv(state.s + 0.5 * h * k1[0], state.d + 0.5 * h * k1[1], state.heading_err + 0.5 * h * k1[2], k2);
    deriv(state.s + 0.5 * h * k2[0], state.d + 0.5 * h * k2[1], state.heading_err + 0.5 * h * k2[2], k3);
    deriv(state.s + h * k3[0], state.d + h * k3[1], state.heading_err + h * k3[2], k4);
    next.s = state.s + h * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]) / 6.0;
    next.d = state.d + h * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]) / 6.0;
    next.heading_err = wrap_angle(state.heading_err + h * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]) / 6.0);
  }

  next.s = map.wrap(next.s);
  next.lane = map.lane_of(next.s, next.d);
  if (!finite_state(next)) throw IntegrityFault("step_vehicle: integration produced a non-finite state");
  return next;
}

}  // namespace abv
