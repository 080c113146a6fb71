#include "abv/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

namespace abv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = 1e-9;
constexpr int kObstacleIdBase = 1000000;
constexpr std::size_t kTailRows = 25;
constexpr double kEngageRetry = 1.0;      // auto persona: seconds between engagement attempts
constexpr double kResetAfterStop = 2.0;
constexpr double kReplanSnap = 0.5;       // m of tracking error before replanning from the estimate   // auto persona: standstill before resetting Emergency
constexpr double kHandsOnTorque = 0.5;    // grip torque of a driver taking over

long steps_for(double seconds, double dt) { return std::max(1L, std::lround(seconds / dt)); }

double lane_keep_steer(const VehicleState& s, double target_d, const RoadMap& map, const ControlParams& cp,
                       const VehicleParams& vp) {
  const double k = map.segment_clamped(s.s).curvature;
  const double ff = std::atan(vp.wheelbase * k / (1.0 - k * target_d));
  return ff - cp.k_d * (s.d - target_d) - cp.k_psi * s.heading_err;
}

bool finite(const VehicleState& s) {
  return std::isfinite(s.s) && std::isfinite(s.d) && std::isfinite(s.v) && std::isfinite(s.heading_err) &&
         std::isfinite(s.a) && std::isfinite(s.steer);
}

void append(std::string& out, const char* fmt, double value) {
  char buf[64];
  if (std::isinf(value)) {
    out += value > 0 ? "inf" : "-inf";
    return;
  }
  std::snprintf(buf, sizeof buf, fmt, value);
  out += buf;
}

}  // namespace

Simulation::Simulation(Scenario scenario, std::optional<std::uint64_t> seed, std::optional<double> duration)
    : scenario_(std::move(scenario)),
      config_(scenario_.config()),
      map_(scenario_.map),
      streams_(seed.value_or(scenario_.seed)),
      supervisor_(config_.supervisor) {
  if (auto problems = validate(scenario_); !problems.empty()) throw ScenarioError(problems);
  dt_ = config_.sim.dt;
  total_steps_ = std::lround(duration.value_or(scenario_.duration) / dt_);
  planner_every_ = steps_for(config_.sim.planner_period, dt_);
  supervisor_every_ = steps_for(config_.sim.supervisor_period, dt_);
  gantry_ = scenario_.gantry_s.value_or(0.5 * map_.total_length());
  m_.seed = streams_.seed();

  auto make_stack = [&](int id, Persona persona) {
    AbvStack st;
    st.persona = persona;
    st.localizer = Localizer(config_.perception);
    st.lane_tracker = LaneTracker(config_.perception.lane_debounce);
    st.monitor = DriverMonitor(config_.arbiter);
    st.guard = SpeedGuard(config_.arbiter);
    st.perception_rng = streams_.stream("perception", static_cast<std::uint64_t>(id));
    st.localizer_rng = streams_.stream("localizer", static_cast<std::uint64_t>(id));
    st.lane_rng = streams_.stream("lanes", static_cast<std::uint64_t>(id));
    return st;
  };

  std::vector<Reserved> reserved;
  if (scenario_.ego) {
    const auto& spec = *scenario_.ego;
    Agent ego;
    ego.id = 0;
    ego.ego = true;
    ego.state.s = map_.wrap(spec.s);
    ego.state.lane = spec.lane;
    ego.state.d = map_.lane_center(spec.s, spec.lane);
    ego.state.v = spec.v;
    ego.desired_speed = spec.desired_speed;
    ego.length = config_.vehicle.length;
    ego.abv = make_stack(0, spec.persona);
    ego.abv->mode = spec.mode;
    agents_.push_back(std::move(ego));
    reserved.push_back(Reserved{spec.s, spec.lane});
  }
  for (const auto& e : scenario_.events)
    if (e.type == EventType::ObstacleSpawn && e.s) reserved.push_back(Reserved{*e.s, e.lane, 30.0, 10.0});

  if (scenario_.traffic) {
    Rng rng = streams_.stream("spawn");
    for (const auto& v : spawn_traffic(*scenario_.traffic, map_, rng, reserved, config_.idm)) {
      Agent a;
      a.id = v.id;
      a.state = v.state;
      a.desired_speed = v.desired_speed;
      a.speed_factor = v.desired_speed / map_.segment_clamped(v.state.s).speed_limit;
      a.length = scenario_.traffic->length;
      if (v.abv) {
        a.abv = make_stack(v.id, Persona::Auto);
        a.state.v = std::min(a.state.v, speed_envelope(map_, SpeedLimits{}, a.state.s, config_.planner));
      }
      agents_.push_back(std::move(a));
    }
  }
  for (const auto& a : agents_) {
    ++m_.vehicles;
    if (a.abv) ++m_.abv_vehicles;
  }
  for (Mode mode : kAllModes) m_.mode_occupancy[mode] = 0.0;
  if (scenario_.ego) m_.ego = EgoSummary{};
}

const Agent* Simulation::ego() const {
  for (const auto& a : agents_)
    if (a.ego) return &a;
  return nullptr;
}

void Simulation::attach_driver(bool attached) {
  external_ = attached;
  external_input_ = DriverInput{};
}

void Simulation::set_driver_input(const DriverInput& input, long received_step) {
  const auto engage = input.engage_request ? input.engage_request : external_input_.engage_request;
  const bool disengage = input.disengage_request || external_input_.disengage_request;
  const bool ack = input.acknowledge || external_input_.acknowledge;
  const bool reset = input.reset_emergency || external_input_.reset_emergency;
  external_input_ = input;
  external_input_.engage_request = engage;
  external_input_.disengage_request = disengage;
  external_input_.acknowledge = ack;
  external_input_.reset_emergency = reset;
  pending_received_ = received_step;
}

std::vector<RefusalNotice> Simulation::take_refusals() { return std::exchange(refusals_, {}); }

// ---------------------------------------------------------------------------

void Simulation::apply_events(double t) {
  const auto& events = scenario_.events;
  for (; next_event_ < events.size() && events[next_event_].t <= t + kEps; ++next_event_) {
    const auto& e = events[next_event_];
    switch (e.type) {
      case EventType::ObstacleSpawn: {
        const Agent* subject = ego();
        double s = e.s ? *e.s : subject->state.s + *e.ahead;
        s = map_.wrap(s);
        Obstacle o;
        o.id = kObstacleIdBase + static_cast<int>(obstacles_.size());
        o.s = s;
        o.d = map_.lane_center(s, e.lane);
        obstacles_.push_back(o);
        break;
      }
      case EventType::SecuredEndOverride:
        for (const auto& seg : map_.segments())
          if (seg.secured && (!e.segment || *e.segment == seg.id)) pending_unsecure_[seg.id] = t + e.notice;
        break;
      case EventType::SensorFault:
        for (auto& a : agents_) {
          if (!a.abv || (ego() && !a.ego)) continue;
          if (e.subsystem == "perception") a.abv->health.perception_ok = false;
          if (e.subsystem == "actuation") a.abv->health.actuation_ok = false;
        }
        break;
      case EventType::DriverInput:
        break;   // read by driver_input()
    }
  }

  bool changed = false;
  auto segments = map_.segments();
  for (auto it = pending_unsecure_.begin(); it != pending_unsecure_.end();) {
    if (it->second > t + kEps) {
      ++it;
      continue;
    }
    for (auto& seg : segments)
      if (seg.id == it->first) seg.secured = false;
    changed = true;
    it = pending_unsecure_.erase(it);
  }
  if (changed) map_ = RoadMap(std::move(segments), map_.closed());
}

void Simulation::supervise(double t) {
  std::vector<VehicleReport> reports;
  for (const auto& a : agents_) {
    if (a.exited) continue;
    reports.push_back({a.id, map_.segment_clamped(a.state.s).id, a.state.v, a.abv.has_value()});
  }
  supervisor_.step(reports, map_, t);
}

std::optional<Simulation::Lead> Simulation::truth_lead(std::size_t index) const {
  const auto& me = agents_[index];
  // Anything overlapping the body, plus a little, is followed.
  const double lane_window = config_.vehicle.width + 0.3;
  std::optional<Lead> best;
  auto consider = [&](double s, double d, double v, double length, int id) {
    if (std::abs(d - me.state.d) >= lane_window) return;
    const double ds = map_.delta(me.state.s, s);
    if (ds <= 0.0) return;
    const double gap = ds - 0.5 * (me.length + length);
    if (!best || gap < best->gap) best = Lead{gap, v, id};
  };
  for (std::size_t j = 0; j < agents_.size(); ++j) {
    if (j == index || agents_[j].exited) continue;
    const auto& o = agents_[j];
    consider(o.state.s, o.state.d, o.state.v, o.length, o.id);
  }
  for (const auto& o : obstacles_) consider(o.s, o.d, 0.0, o.length, o.id);
  return best;
}

Command Simulation::human_command(const Agent& a, std::optional<Lead> lead, double t) const {
  (void)t;
  const auto& cp = config_.control;
  const auto& vp = config_.vehicle;
  const double target_d = map_.lane_center(a.state.s, map_.lane_of(a.state.s, a.state.d));
  Command cmd;
  cmd.steer = lane_keep_steer(a.state, target_d, map_, cp, vp);
  const double torque = a.abv ? a.abv->input.steer_torque : 0.0;
  cmd.steer += torque / cp.torque_per_rad;

  if (a.ego && external_) {
    const auto& in = a.abv->input;
    cmd.accel = in.throttle * vp.accel_max + in.brake * vp.accel_min;
    return cmd;
  }
  const double desired = a.ego ? std::min(a.desired_speed, map_.segment_clamped(a.state.s).speed_limit)
                               : a.speed_factor * map_.segment_clamped(a.state.s).speed_limit;
  const auto r = lead ? idm_accel(a.state.v, lead->v, lead->gap, desired, config_.idm)
                      : idm_accel(a.state.v, 0.0, kInf, desired, config_.idm);
  cmd.accel = r.accel;
  return cmd;
}

DriverInput Simulation::driver_input(Agent& a, double t) {
  auto& st = *a.abv;
  DriverInput in;
  if (a.ego && external_) {
    in = external_input_;
    external_input_.engage_request.reset();
    external_input_.disengage_request = false;
    external_input_.acknowledge = false;
    external_input_.reset_emergency = false;
    if (pending_received_) {
      last_applied_ = std::make_pair(*pending_received_, step_);
      pending_received_.reset();
    }
    return in;
  }

  if (st.tor && st.tor->state == TorState::Pending) {
    if (auto delay = acknowledge_delay(st.persona); delay && t >= st.tor->issued_at + *delay - kEps) {
      in.acknowledge = true;
      in.steer_torque = kHandsOnTorque;
    }
  }
  if (st.persona == Persona::Auto) {
    const bool legal = st.estimate.v <= speed_envelope(map_, limits_, st.estimate.s, config_.planner);
    if ((st.mode == Mode::Driver || st.mode == Mode::LongiAdas) && legal && t >= st.next_engage_try - kEps) {
      in.engage_request = Mode::FullSystem;
      st.next_engage_try = t + kEngageRetry;
    }
    if (st.mode == Mode::Emergency && st.standstill_time >= kResetAfterStop) in.reset_emergency = true;
  }
  if (a.ego) {
    for (const auto& e : scenario_.events) {
      if (e.type != EventType::DriverInput) continue;
      const double end = e.t + std::max(e.duration, dt_);
      if (t < e.t - kEps || t >= end - kEps) continue;
      in.steer_torque += e.input.steer_torque;
      in.throttle = std::max(in.throttle, e.input.throttle);
      in.brake = std::max(in.brake, e.input.brake);
      if (t < e.t + dt_ - kEps) {
        if (e.input.engage_request) in.engage_request = e.input.engage_request;
        in.disengage_request = in.disengage_request || e.input.disengage_request;
        in.acknowledge = in.acknowledge || e.input.acknowledge;
        in.reset_emergency = in.reset_emergency || e.input.reset_emergency;
      }
    }
  }
  return in;
}

std::vector<Prediction> Simulation::predictions_for(const Agent& a, double origin, double shift) const {
  const auto& st = *a.abv;
  const auto& pp = config_.planner;
  std::vector<ObjectTrack> nearby;
  for (const auto& tr : st.tracks)
    if (tr.confirmed && std::abs(map_.delta(st.estimate.s, tr.s)) <= pp.lookahead + 20.0) nearby.push_back(tr);
  const double horizon = *std::max_element(pp.horizons.begin(), pp.horizons.end()) + 10.0;
  auto preds = predict_others(nearby, map_, horizon, pp.tick, origin, config_.vehicle.length);
  // min_front_gap samples trajectory and prediction on one clock; a latched
  // trajectory is `shift` seconds old, so pad the prediction's start.
  const long pad = std::lround(shift / pp.tick);
  if (pad > 0) {
    for (auto& p : preds) {
      p.s.insert(p.s.begin(), pad, p.s.front());
      p.d.insert(p.d.begin(), pad, p.d.front());
      p.v.insert(p.v.begin(), pad, p.v.front());
    }
  }
  return preds;
}

void Simulation::plan_for(Agent& a, double t) {
  auto& st = *a.abv;
  const auto& ap = config_.arbiter;
  const auto& pp = config_.planner;
  PlanningContext ctx;
  ctx.t = t;
  ctx.limits = limits_;
  double desired = std::min(a.desired_speed, ap.full_speed_max - pp.speed_margin);
  desired = std::min(desired, eco_speed_advice(map_, limits_, st.estimate.s, std::nullopt, config_.control));
  if (st.tor && st.tor->state == TorState::Pending) {
    double target;
    if (st.tor->reason == TorReason::SecuredRoadEnding) {
      const double room = map_.distance_to_secured_end(st.estimate.s) - ap.tor_margin;
      target = std::sqrt(2.0 * ap.degrade_decel * std::max(0.0, room));
    } else {
      target = std::max(0.0, st.tor_issue_speed - ap.degrade_decel * (t - st.tor->issued_at));
    }
    desired = std::min(desired, target);
  }
  ctx.desired_speed = desired;
  // Replan laterally from the previous reference while tracking it closely;
  // restarting from the noisy estimate lets the path random-walk.
  VehicleState start = st.estimate;
  if (st.plan && !st.plan->fallback) {
    const auto& prev = st.plan->nominal;
    const double t_on = t - prev.t0();
    const double d_ref = prev.offset(t_on);
    if (t_on <= prev.horizon() && std::abs(d_ref - start.d) < kReplanSnap) {
      const double t_lat = std::min(t_on, prev.lateral_duration());
      ctx.lateral_start = BoundaryState<double>{d_ref, prev.offset_rate(t_lat), prev.offset_accel(t_lat)};
      start.d = d_ref;
    }
  }
  st.plan = plan(start, st.tracks, map_, st.mode, ctx, pp, config_.vehicle);
}

Command Simulation::abv_command(Agent& a, double t) {
  auto& st = *a.abv;
  const auto& ap = config_.arbiter;
  const auto& cp = config_.control;
  const auto& vp = config_.vehicle;
  const auto& pp = config_.planner;

  // Perception.
  VehicleState est = st.localizer.localize(a.state, st.localizer_rng);
  const auto lanes = st.lane_tracker.update(sense_lanes(a.state, map_, st.lane_rng, config_.perception), t);
  if (lanes.valid) {
    est.d = map_.lane_center(a.state.s, map_.lane_of(a.state.s, a.state.d)) + lanes.lateral_offset;
    est.heading_err = lanes.heading_err;
  }
  st.estimate = est;

  // Fusion.
  std::vector<Detection> detections;
  if (st.health.perception_ok) {
    const double reach = config_.perception.laser_range + 10.0;
    std::vector<SceneObject> others;
    std::vector<SceneObject> statics;
    for (const auto& o : agents_) {
      if (&o == &a || o.exited) continue;
      if (std::abs(map_.delta(a.state.s, o.state.s)) > reach) continue;
      others.push_back({o.state.s, o.state.d, o.state.v});
    }
    for (const auto& o : obstacles_)
      if (std::abs(map_.delta(a.state.s, o.s)) <= reach) statics.push_back({o.s, o.d, 0.0});
    detections = sense_objects(a.state, others, statics, map_, t, st.perception_rng, config_.perception);
    auto rear = sense_rear(a.state, others, map_, t, st.perception_rng, config_.perception);
    detections.insert(detections.end(), rear.begin(), rear.end());
  }
  const FusionFrame frame{est.s, est.d, est.v, map_.closed() ? map_.total_length() : 0.0};
  st.tracks = fuse(std::move(st.tracks), detections, dt_, st.track_ids, frame, config_.fusion);

  // Arbitration.
  DriverInput in = driver_input(a, t);
  st.input = in;
  const auto readiness = st.monitor.update(t, in);
  const bool on_road = map_.on_map(est.s);
  const bool secured = on_road && map_.segment_at(est.s).secured;
  const bool guard_ok = st.guard.update(est.v, dt_);
  const double guard_v = st.mode == Mode::FullSystem && guard_ok ? std::min(est.v, ap.full_speed_max) : est.v;

  ArbiterInput ai;
  ai.driver = in;
  ai.readiness = readiness;
  ai.health = st.health;
  ai.available = available_modes(guard_v, secured, st.health, ap);
  ai.steering_override = st.shared.override_active;
  ai.v = est.v;
  ai.t = t;
  ai.secured = secured;
  ai.speed_ok = est.v <= ap.full_speed_max;
  if (st.guard.excess_sustained()) {
    ai.handover_reason = TorReason::SpeedExceeded;
  } else if (on_road && pending_unsecure_.count(map_.segment_at(est.s).id)) {
    ai.handover_reason = TorReason::SupervisorOrder;
  } else if (secured && map_.distance_to_secured_end(est.s) <= est.v * ap.tor_deadline + ap.tor_margin) {
    ai.handover_reason = TorReason::SecuredRoadEnding;
  } else if (st.plan && !st.plan->healthy) {
    ai.handover_reason = TorReason::SystemFault;
  }

  const Mode before = st.mode;
  const auto previous_tor = st.tor;
  const auto out = step_arbiter(st.mode, st.tor, ai, ap);
  const bool fresh_tor = out.tor && out.tor->state == TorState::Pending &&
                         (!previous_tor || previous_tor->issued_at != out.tor->issued_at);
  const bool resolved = out.tor && out.tor->state != TorState::Pending && previous_tor &&
                        previous_tor->state == TorState::Pending;
  if (fresh_tor) {
    ++m_.tor.issued;
    st.tor_issue_speed = est.v;
    if (a.ego && !m_.ego->tor_issued_at) {
      m_.ego->tor_issued_at = t;
      m_.ego->tor_reason = out.tor->reason;
    }
  }
  if (resolved) {
    if (out.tor->state == TorState::Acknowledged) ++m_.tor.acknowledged;
    if (out.tor->state == TorState::Expired) ++m_.tor.expired;
    if (a.ego && !m_.ego->tor_outcome) {
      m_.ego->tor_outcome = out.tor->state;
      m_.ego->tor_resolved_at = t;
    }
  }
  if (a.ego && out.refusal != Refusal::None && out.refused_mode)
    refusals_.push_back(RefusalNotice{step_, t, *out.refused_mode, out.refusal});
  st.mode = out.mode;
  st.tor = out.tor;

  // Safety invariant, against the true state.
  if (st.mode == Mode::FullSystem && !(st.tor && st.tor->state == TorState::Pending)) {
    const bool truly_secured = map_.on_map(a.state.s) && map_.segment_at(a.state.s).secured;
    if (!truly_secured || a.state.v > ap.full_speed_max + ap.hysteresis) ++m_.invariant_violations;
  }

  // Planning (latched at the planner rate).
  if (st.mode == Mode::Emergency && before != Mode::Emergency) {
    if (a.ego) m_.ego->entered_emergency = true;
    if (st.plan && t - st.plan->mrs.t0() <= config_.sim.planner_period + kEps) {
      st.mrs = st.plan->mrs;
    } else {
      st.mrs = mrs_trajectory(est, map_, predictions_for(a, est.s, 0.0), t, pp, vp);
    }
  }
  if (st.mode != Mode::Emergency) st.mrs.reset();
  if (st.mode == Mode::FullSystem) {
    if (before != Mode::FullSystem || !st.plan || step_ % planner_every_ == 0) plan_for(a, t);
  } else if (st.mode != Mode::Emergency) {
    st.plan.reset();
  }
  if (st.mode == Mode::Emergency && step_ % planner_every_ == 0 && est.v > pp.stationary_speed &&
      st.mrs->maneuver().kind != ManeuverKind::EmergencyStop) {
    const double t_on = t - st.mrs->t0();
    const auto preds = predictions_for(a, st.mrs->s0(), t_on);
    if (min_front_gap(*st.mrs, preds, pp, vp, t_on) < pp.clearance_floor)
      st.mrs = escalate_to_emergency(*st.mrs, t_on, est, pp, vp);
  }
  st.standstill_time = a.state.v <= 0.0 ? st.standstill_time + dt_ : 0.0;

  // Lead seen by the vehicle's own sensors.
  std::optional<LeadGap> lead;
  for (const auto& tr : st.tracks) {
    if (!tr.confirmed) continue;
    const double ds = map_.delta(est.s, tr.s);
    if (ds <= 0.0 || std::abs(tr.d - est.d) >= vp.width + 0.5) continue;
    const double gap = ds - vp.length;
    if (!lead || gap < lead->gap) lead = LeadGap{gap, std::max(tr.v, 0.0)};
  }

  // Control.
  Command cmd;
  switch (st.mode) {
    case Mode::FullSystem:
    case Mode::Emergency: {
      const Trajectory& traj = st.mode == Mode::FullSystem ? st.plan->nominal : *st.mrs;
      const double t_on = t - traj.t0();
      const auto steer = lateral_control(est, traj, t_on, map_, cp, vp);
      st.shared = shared_torque(assist_torque_for(steer.feedback, cp), in, st.shared, dt_, cp);
      cmd.steer = steer.feedforward + st.shared.applied_torque / cp.torque_per_rad;
      cmd.accel = longitudinal_control(est, traj, t_on, lead, cp, vp);
      break;
    }
    case Mode::LongiAdas: {
      const double target_d = map_.lane_center(a.state.s, map_.lane_of(a.state.s, a.state.d));
      cmd.steer = lane_keep_steer(a.state, target_d, map_, cp, vp) + in.steer_torque / cp.torque_per_rad;
      const double v_ref = std::min(a.desired_speed, limits_.at(map_, est.s) - pp.speed_margin);
      cmd.accel = longitudinal_control(est.v, v_ref, 0.0, lead, cp, vp);
      st.shared = SharedControlState{};
      break;
    }
    case Mode::Driver: {
      std::optional<Lead> truth;
      for (std::size_t i = 0; i < agents_.size(); ++i)
        if (&agents_[i] == &a) truth = truth_lead(i);
      cmd = human_command(a, truth, t);
      st.shared = SharedControlState{};
      break;
    }
  }
  if (st.mode != Mode::FullSystem && st.mode != Mode::Emergency) {
    st.shared.driver_torque = in.steer_torque;
    st.shared.applied_torque = in.steer_torque;
    const double recommended =
        longitudinal_control(est.v, limits_.at(map_, est.s) - pp.speed_margin, 0.0, lead, cp, vp);
    st.shared.pedal_feedback = pedal_feedback(recommended, in.throttle, cp, vp);
  }
  return cmd;
}

// ---------------------------------------------------------------------------

void Simulation::step() {
  if (finished()) return;
  try {
    const double t = time();
    apply_events(t);
    if (step_ % supervisor_every_ == 0) supervise(t);
    limits_ = SpeedLimits(supervisor_.advised(t));

    std::vector<Command> commands(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      auto& a = agents_[i];
      if (a.exited) continue;
      commands[i] = a.abv ? abv_command(a, t) : human_command(a, truth_lead(i), t);
      if (!std::isfinite(commands[i].steer) || !std::isfinite(commands[i].accel))
        throw IntegrityFault("non-finite command for vehicle " + std::to_string(a.id));
    }

    std::vector<VehicleState> before;
    before.reserve(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      auto& a = agents_[i];
      before.push_back(a.state);
      if (a.exited) continue;
      a.command = commands[i];
      a.state = step_vehicle(a.state, commands[i], dt_, map_, config_.vehicle);
      if (!finite(a.state)) throw IntegrityFault("non-finite state for vehicle " + std::to_string(a.id));
    }
    accumulate(before);
    ++step_;
    write_trace_row();
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

void Simulation::accumulate(const std::vector<VehicleState>& before) {
  const auto& vp = config_.vehicle;
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    auto& a = agents_[i];
    if (a.exited) continue;
    const auto& s = a.state;
    speed_sum_ += s.v;
    ++speed_samples_;
    const double ds = map_.closed() ? map_.delta(before[i].s, s.s) : s.s - before[i].s;
    m_.distance_km += std::max(ds, 0.0) / 1000.0;
    a.fuel.update(s.v, s.a, vp.mass, dt_, config_.fuel);

    const double d0 = map_.delta(gantry_, before[i].s);
    const double d1 = map_.delta(gantry_, s.s);
    if (d0 < 0.0 && d1 >= 0.0 && d1 - d0 < 0.5 * map_.total_length()) ++gantry_crossings_;

    // Bodies that overlap laterally.
    std::optional<Lead> lead;
    auto consider = [&](double os, double od, double ov, double olen, double owidth, int id) {
      if (std::abs(od - s.d) >= 0.5 * (vp.width + owidth)) return;
      const double gap_s = map_.delta(s.s, os);
      if (gap_s < 0.0) return;
      const double gap = gap_s - 0.5 * (a.length + olen);
      if (!lead || gap < lead->gap) lead = Lead{gap, ov, id};
    };
    for (std::size_t j = 0; j < agents_.size(); ++j) {
      if (j == i || agents_[j].exited) continue;
      const auto& o = agents_[j].state;
      consider(o.s, o.d, o.v, agents_[j].length, vp.width, agents_[j].id);
    }
    for (const auto& o : obstacles_) consider(o.s, o.d, 0.0, o.length, 1.0, o.id);

    if (lead) {
      if (lead->gap <= 0.0 && colliding_.insert({std::min(a.id, lead->id), std::max(a.id, lead->id)}).second)
        ++m_.collisions;
      const double closing = s.v - lead->v;
      if (closing > 0.0) {
        const double ttc = std::max(lead->gap, 0.0) / closing;
        std::size_t bin = m_.ttc_bin_edges.size() - 1;
        for (std::size_t b = 1; b < m_.ttc_bin_edges.size(); ++b) {
          if (ttc < m_.ttc_bin_edges[b]) {
            bin = b - 1;
            break;
          }
        }
        ++m_.min_ttc_histogram[bin];
        if (ttc < 2.0) m_.ttc_lt_2s_exposure += dt_;
      }
    }

    if (a.abv) {
      const auto& st = *a.abv;
      m_.mode_occupancy[st.mode] += dt_;
      m_.max_assist_torque = std::max(m_.max_assist_torque, std::abs(st.shared.assist_torque));
      if (st.mode == Mode::FullSystem || st.mode == Mode::Emergency) {
        m_.max_speed_excess = std::max(m_.max_speed_excess, s.v - map_.segment_clamped(s.s).speed_limit);
        if (lead) m_.min_clearance = std::min(m_.min_clearance, lead->gap);
      }
    }
    if (a.ego) {
      auto& e = *m_.ego;
      e.state = s;
      e.mode = a.abv->mode;
      e.front_gap = lead ? lead->gap : kInf;
      const auto& in = a.abv->input;
      e.driver_activity += (std::abs(in.steer_torque) + in.throttle + in.brake) * dt_;
    }
    if (!map_.closed() && s.s >= map_.total_length() - 0.5 * a.length) a.exited = true;
  }
}

Metrics Simulation::metrics() const {
  Metrics out = m_;
  out.steps = step_;
  out.duration = time();
  out.mean_speed = speed_samples_ ? speed_sum_ / static_cast<double>(speed_samples_) : 0.0;
  out.throughput_vph = out.duration > 0.0 ? static_cast<double>(gantry_crossings_) / out.duration * 3600.0 : 0.0;
  out.total_fuel_g = 0.0;
  for (const auto& a : agents_) out.total_fuel_g += a.fuel.cumulative;
  out.fuel_g_per_km = out.distance_km > 0.0 ? out.total_fuel_g / out.distance_km : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Trace

std::string Simulation::trace_header() {
  return "schema_version,step,t,ego_s,ego_d,ego_v,ego_a,ego_heading_err,ego_steer,ego_lane,mode,tor_state,"
         "tor_deadline,trajectory,fallback,assist_torque,driver_torque,override_active,authority,front_gap,tracks,"
         "vehicles,collisions,fuel_g\n";
}

void Simulation::set_trace(std::ostream* out) {
  trace_ = out;
  if (trace_) *trace_ << trace_header();
}

std::string Simulation::trace_row() const {
  const Agent* subject = ego();
  if (!subject)
    for (const auto& a : agents_)
      if (a.abv) {
        subject = &a;
        break;
      }
  std::string row = std::to_string(kTraceSchemaVersion) + "," + std::to_string(step_) + ",";
  append(row, "%.2f", time());
  row += ',';
  if (subject) {
    const auto& s = subject->state;
    for (double x : {s.s, s.d, s.v, s.a, s.heading_err, s.steer}) {
      append(row, "%.6f", x);
      row += ',';
    }
    row += std::to_string(s.lane) + ",";
  } else {
    row += ",,,,,,,";
  }
  if (subject && subject->abv) {
    const auto& st = *subject->abv;
    row += std::string(to_string(st.mode)) + ",";
    row += st.tor ? std::string(to_string(st.tor->state)) + "," : "none,";
    if (st.tor) append(row, "%.2f", st.tor->deadline);
    row += ',';
    if (st.mode == Mode::Emergency && st.mrs) {
      row += std::string(to_string(st.mrs->maneuver().kind)) + ",0,";
    } else if (st.plan) {
      row += std::string(to_string(st.plan->nominal.maneuver().kind)) + "," + (st.plan->fallback ? "1," : "0,");
    } else {
      row += "none,0,";
    }
    for (double x : {st.shared.assist_torque, st.shared.driver_torque}) {
      append(row, "%.6f", x);
      row += ',';
    }
    row += st.shared.override_active ? "1," : "0,";
    append(row, "%.6f", st.shared.authority);
    row += ',';
  } else {
    row += "Driver,none,,none,0,0.000000,0.000000,0,1.000000,";
  }
  append(row, "%.6f", m_.ego ? m_.ego->front_gap : kInf);
  row += ',';
  row += std::to_string(subject && subject->abv ? subject->abv->tracks.size() : 0) + ",";
  long active = 0;
  double fuel = 0.0;
  for (const auto& a : agents_) {
    active += a.exited ? 0 : 1;
    fuel += a.fuel.cumulative;
  }
  row += std::to_string(active) + "," + std::to_string(m_.collisions) + ",";
  append(row, "%.6f", fuel);
  row += '\n';
  return row;
}

void Simulation::write_trace_row() {
  auto row = trace_row();
  if (trace_) *trace_ << row;
  tail_.push_back(std::move(row));
  if (tail_.size() > kTailRows) tail_.pop_front();
}

void Simulation::fail(const std::string& what) const {
  std::string msg = "integrity fault at step " + std::to_string(step_) + ": " + what + "\ntrace tail:\n" +
                    trace_header();
  for (const auto& row : tail_) msg += row;
  throw IntegrityFault(msg);
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["schema_version"] = m.schema_version;
  j["seed"] = m.seed;
  j["duration"] = m.duration;
  j["steps"] = m.steps;
  j["vehicles"] = m.vehicles;
  j["abv_vehicles"] = m.abv_vehicles;
  j["throughput_vph"] = m.throughput_vph;
  j["mean_speed"] = m.mean_speed;
  j["total_fuel_g"] = m.total_fuel_g;
  j["distance_km"] = m.distance_km;
  j["fuel_g_per_km"] = m.fuel_g_per_km;
  j["collisions"] = m.collisions;
  j["ttc_bin_edges"] = m.ttc_bin_edges;
  j["min_ttc_histogram"] = m.min_ttc_histogram;
  j["ttc_lt_2s_exposure"] = m.ttc_lt_2s_exposure;
  nlohmann::ordered_json occupancy;
  for (const auto& [mode, seconds] : m.mode_occupancy) occupancy[std::string(to_string(mode))] = seconds;
  j["mode_occupancy"] = occupancy;
  j["tor_outcomes"] = {{"issued", m.tor.issued}, {"acknowledged", m.tor.acknowledged}, {"expired", m.tor.expired}};
  j["invariant_violations"] = m.invariant_violations;
  j["max_speed_excess"] = m.max_speed_excess;
  j["min_clearance"] = m.min_clearance;
  j["max_assist_torque"] = m.max_assist_torque;
  if (m.ego) {
    const auto& e = *m.ego;
    nlohmann::ordered_json ego;
    ego["s"] = e.state.s;
    ego["d"] = e.state.d;
    ego["v"] = e.state.v;
    ego["lane"] = e.state.lane;
    ego["mode"] = std::string(to_string(e.mode));
    ego["entered_emergency"] = e.entered_emergency;
    ego["front_gap"] = std::isfinite(e.front_gap) ? nlohmann::ordered_json(e.front_gap) : nlohmann::ordered_json();
    ego["driver_activity"] = e.driver_activity;
    ego["tor_issued_at"] = e.tor_issued_at ? nlohmann::ordered_json(*e.tor_issued_at) : nlohmann::ordered_json();
    ego["tor_reason"] = e.tor_reason ? nlohmann::ordered_json(std::string(to_string(*e.tor_reason)))
                                     : nlohmann::ordered_json();
    ego["tor_outcome"] = e.tor_outcome ? nlohmann::ordered_json(std::string(to_string(*e.tor_outcome)))
                                       : nlohmann::ordered_json();
    ego["tor_resolved_at"] =
        e.tor_resolved_at ? nlohmann::ordered_json(*e.tor_resolved_at) : nlohmann::ordered_json();
    j["ego"] = ego;
  }
  return j;
}

Metrics run(const Scenario& scenario, const RunOptions& options) {
  Simulation sim(scenario, options.seed, options.duration);
  if (options.trace) sim.set_trace(options.trace);
  while (!sim.finished()) sim.step();
  return sim.metrics();
}

}  // namespace abv
