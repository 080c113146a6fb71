#include "abv/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace abv {

IdmResult idm_accel(double v, double v_lead, double gap, double desired_speed, const IdmParams& p) {
  if (gap <= 0.0) return {p.accel_floor, true};
  v = std::max(v, 0.0);
  const double free = desired_speed > 0.0 ? 1.0 - std::pow(v / desired_speed, p.delta) : -1.0;
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    const double s_star = p.s0 + std::max(0.0, v * p.time_gap + v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b_comf)));
    interaction = (s_star / gap) * (s_star / gap);
  }
  const double a = p.a_max * (free - interaction);
  return {std::clamp(a, p.accel_floor, p.a_max), false};
}

double idm_equilibrium_speed(double gap, double desired_speed, const IdmParams& p) {
  if (gap <= p.s0) return 0.0;
  double lo = 0.0;
  double hi = desired_speed;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (idm_accel(mid, mid, gap, desired_speed, p).accel > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

std::map<int, double> observed_density(const std::vector<VehicleReport>& reports, const RoadMap& map) {
  std::map<int, int> counts;
  for (const auto& r : reports) {
    const RoadSegment* seg = nullptr;
    for (const auto& candidate : map.segments())
      if (candidate.id == r.segment_id) seg = &candidate;
    if (!seg) continue;
    if (!r.abv && !seg->instrumented) continue;
    ++counts[r.segment_id];
  }
  std::map<int, double> out;
  for (const auto& seg : map.segments()) {
    auto it = counts.find(seg.id);
    const double n = it == counts.end() ? 0.0 : it->second;
    out[seg.id] = n / (seg.length / 1000.0) / seg.lane_count;
  }
  return out;
}

std::vector<Recommendation> supervisor_step(const std::vector<VehicleReport>& reports, const RoadMap& map, double t,
                                            const SupervisorParams& params) {
  std::vector<Recommendation> out;
  const auto density = observed_density(reports, map);
  for (const auto& seg : map.segments()) {
    const double rho = density.at(seg.id);
    double advice;
    if (rho > params.jam_density) {
      advice = params.jam_advice;
    } else if (rho > params.dense_density) {
      advice = params.dense_advice;
    } else {
      continue;
    }
    out.push_back({seg.id, std::min(advice, seg.speed_limit), t, params.ttl});
  }
  return out;
}

const std::vector<Recommendation>& Supervisor::step(const std::vector<VehicleReport>& reports, const RoadMap& map,
                                                    double t) {
  std::erase_if(active_, [&](const Recommendation& r) { return !r.live(t); });
  for (const auto& fresh : supervisor_step(reports, map, t, params_)) {
    auto it = std::find_if(active_.begin(), active_.end(),
                           [&](const Recommendation& r) { return r.segment_id == fresh.segment_id; });
    if (it == active_.end()) {
      active_.push_back(fresh);
    } else {
      *it = fresh;
    }
  }
  std::sort(active_.begin(), active_.end(),
            [](const Recommendation& a, const Recommendation& b) { return a.segment_id < b.segment_id; });
  return active_;
}

std::map<int, double> Supervisor::advised(double t) const {
  std::map<int, double> out;
  for (const auto& r : active_)
    if (r.live(t)) out[r.segment_id] = r.advised_limit;
  return out;
}

std::vector<SpawnedVehicle> spawn_traffic(const TrafficSpec& spec, const RoadMap& map, Rng& rng,
                                          const std::vector<Reserved>& reserved, const IdmParams& idm) {
  if (spec.penetration < 0.0 || spec.penetration > 1.0)
    throw std::invalid_argument("penetration must lie in [0, 1]");
  const double start = spec.region_start;
  const double end = spec.region_end < 0.0 ? map.total_length() : spec.region_end;
  if (!(end > start)) throw std::invalid_argument("traffic region is empty");
  int lanes = std::numeric_limits<int>::max();
  for (double s = start; s < end; s += 10.0) lanes = std::min(lanes, map.segment_clamped(s).lane_count);
  const double region = end - start;

  int total = spec.count;
  if (total <= 0) total = static_cast<int>(std::lround(spec.density * region / 1000.0 * lanes));
  if (total <= 0) return {};

  std::vector<SpawnedVehicle> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int next_id = 1;
  for (int lane = 0; lane < lanes; ++lane) {
    const int n = total / lanes + (lane < total % lanes ? 1 : 0);
    if (n == 0) continue;
    const double spacing = region / n;
    const double min_spacing = spec.length + idm.s0 + 1.0;
    if (spacing < min_spacing)
      throw std::invalid_argument("density " + std::to_string(total) + " vehicles over " + std::to_string(region) +
                                  " m cannot fit: spacing " + std::to_string(spacing) + " m < " +
                                  std::to_string(min_spacing) + " m");
    // Half-slot stagger between lanes.
    const double phase = lane % 2 == 0 ? 0.25 : 0.75;
    const double jitter_span = 0.1 * (spacing - min_spacing);
    for (int i = 0; i < n; ++i) {
      const double jitter = (unit(rng) - 0.5) * jitter_span;
      const double factor = spec.speed_factor_min + (spec.speed_factor_max - spec.speed_factor_min) * unit(rng);
      const bool abv = unit(rng) < spec.penetration;
      const double s = start + (i + phase) * spacing + jitter;
      bool blocked = false;
      for (const auto& r : reserved) {
        if (r.lane != lane) continue;
        const double rel = map.delta(r.s, s);
        if (rel > -r.behind && rel < r.ahead) blocked = true;
      }
      if (blocked) continue;
      const auto& seg = map.segment_clamped(s);
      SpawnedVehicle veh;
      veh.id = next_id++;
      veh.abv = abv;
      veh.desired_speed = factor * seg.speed_limit;
      veh.state.s = map.wrap(s);
      veh.state.d = lane * seg.lane_width;
      veh.state.lane = lane;
      const double worst_gap = spacing - jitter_span - spec.length;
      veh.state.v = std::min(veh.desired_speed, idm_equilibrium_speed(worst_gap, veh.desired_speed, idm));
      out.push_back(veh);
    }
  }
  return out;
}

}  // namespace abv
