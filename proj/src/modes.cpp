#include "abv/modes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace abv {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Driver: return "Driver";
    case Mode::LongiAdas: return "LongiAdas";
    case Mode::FullSystem: return "FullSystem";
    case Mode::Emergency: return "Emergency";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view text) {
  for (Mode m : kAllModes)
    if (to_string(m) == text) return m;
  return std::nullopt;
}

std::string ModeSet::to_string() const {
  std::string out;
  for (Mode m : kAllModes) {
    if (!contains(m)) continue;
    if (!out.empty()) out += '|';
    out += abv::to_string(m);
  }
  return out;
}

std::string_view to_string(TorReason reason) {
  switch (reason) {
    case TorReason::SecuredRoadEnding: return "secured_road_ending";
    case TorReason::SpeedExceeded: return "speed_exceeded";
    case TorReason::SystemFault: return "system_fault";
    case TorReason::SupervisorOrder: return "supervisor_order";
  }
  return "?";
}

std::string_view to_string(TorState state) {
  switch (state) {
    case TorState::Pending: return "pending";
    case TorState::Acknowledged: return "acknowledged";
    case TorState::Expired: return "expired";
  }
  return "?";
}

std::string_view to_string(Refusal refusal) {
  switch (refusal) {
    case Refusal::None: return "none";
    case Refusal::NotAvailable: return "not_available";
    case Refusal::SpeedTooHigh: return "speed_above_50kmh";
    case Refusal::NotSecured: return "road_not_secured";
    case Refusal::SystemUnhealthy: return "system_unhealthy";
    case Refusal::EmergencyActive: return "emergency_active";
    case Refusal::InvalidTarget: return "invalid_target";
  }
  return "?";
}

std::string_view to_string(DriverAction action) {
  switch (action) {
    case DriverAction::None: return "none";
    case DriverAction::Disengage: return "disengage";
    case DriverAction::Override: return "override";
    case DriverAction::EngageLongiAdas: return "engage_longi_adas";
    case DriverAction::EngageFullSystem: return "engage_full_system";
    case DriverAction::Acknowledge: return "acknowledge";
    case DriverAction::ResetEmergency: return "reset_emergency";
  }
  return "?";
}

ModeSet available_modes(double v, bool secured, const SystemHealth& health, const ArbiterParams& params) {
  ModeSet out{Mode::Driver, Mode::Emergency};
  if (health.ok()) {
    out.insert(Mode::LongiAdas);
    if (secured && v <= params.full_speed_max) out.insert(Mode::FullSystem);
  }
  return out;
}

bool is_active(const DriverInput& in, const ArbiterParams& params) {
  return std::abs(in.steer_torque) > params.torque_activity || in.throttle > params.pedal_activity ||
         in.brake > params.pedal_activity || in.acknowledge;
}

DriverReadiness monitor_driver(std::span<const TimedInput> history, double now, double window,
                               const ArbiterParams& params) {
  DriverReadiness out;
  out.last_activity_age = window;
  for (const auto& entry : history) {
    const double age = now - entry.t;
    if (age < 0.0 || age > window) continue;
    if (!is_active(entry.input, params)) continue;
    if (!out.ready || age < out.last_activity_age) out.last_activity_age = age;
    out.ready = true;
  }
  return out;
}

DriverReadiness DriverMonitor::update(double t, const DriverInput& input) {
  history_.push_back({t, input});
  while (!history_.empty() && t - history_.front().t > params_.monitor_window) history_.pop_front();
  std::vector<TimedInput> window(history_.begin(), history_.end());
  return monitor_driver(window, t, params_.monitor_window, params_);
}

bool SpeedGuard::update(double v, double dt) {
  if (v > params_.full_speed_max) {
    excess_time_ += dt;
  } else {
    excess_time_ = 0.0;
  }
  return v <= params_.full_speed_max + params_.hysteresis;
}

namespace {

Refusal explain(Mode requested, const ArbiterInput& in) {
  if (requested == Mode::Emergency || requested == Mode::Driver) return Refusal::InvalidTarget;
  if (!in.health.ok()) return Refusal::SystemUnhealthy;
  if (requested == Mode::FullSystem) {
    if (!in.secured) return Refusal::NotSecured;
    if (!in.speed_ok) return Refusal::SpeedTooHigh;
  }
  return Refusal::NotAvailable;
}

void resolve(std::optional<TakeOverRequest>& tor, TorState state) {
  if (tor && tor->state == TorState::Pending) tor->state = state;
}

}  // namespace

ArbiterOutcome step_arbiter(Mode mode, std::optional<TakeOverRequest> tor, const ArbiterInput& in,
                            const ArbiterParams& params) {
  if (tor && tor->state != TorState::Pending) tor.reset();
  ArbiterOutcome out;
  out.mode = mode;

  auto refuse = [&](Mode requested, Refusal why) {
    out.refusal = why;
    out.refused_mode = requested;
  };

  // Emergency is absorbing until standstill plus an explicit reset.
  if (mode == Mode::Emergency) {
    if (in.driver.reset_emergency && in.v <= 0.0) {
      out.mode = Mode::Driver;
    } else if (in.driver.engage_request) {
      refuse(*in.driver.engage_request, Refusal::EmergencyActive);
    }
    out.tor = tor;
    return out;
  }

  // 1. A failure of an active automation function stops the vehicle.
  if (!in.health.ok() && mode != Mode::Driver) {
    resolve(tor, TorState::Expired);
    out.mode = Mode::Emergency;
    out.tor = tor;
    return out;
  }

  // 2. The driver can always take back control.
  if (mode != Mode::Driver && (in.driver.disengage_request || in.steering_override)) {
    resolve(tor, TorState::Acknowledged);
    out.mode = Mode::Driver;
    out.tor = tor;
    return out;
  }

  // 3. Handover out of FullSystem.
  if (mode == Mode::FullSystem) {
    const bool guard_lost = !in.available.contains(Mode::FullSystem);
    const bool taking_over = in.readiness.ready && is_active(in.driver, params);
    auto hand_back = [&] {
      resolve(tor, TorState::Acknowledged);
      out.mode = Mode::Driver;
      if (in.driver.engage_request == Mode::LongiAdas && in.available.contains(Mode::LongiAdas))
        out.mode = Mode::LongiAdas;
      out.tor = tor;
      return out;
    };
    if (tor) {
      if (taking_over && in.t <= tor->deadline) return hand_back();
      if (in.t > tor->deadline || guard_lost) {
        resolve(tor, TorState::Expired);
        out.mode = Mode::Emergency;
        out.tor = tor;
        return out;
      }
      out.tor = tor;
      return out;
    }
    if (guard_lost) {
      if (taking_over) return hand_back();
      out.mode = Mode::Emergency;
      return out;
    }
    if (in.handover_reason) {
      TakeOverRequest request;
      request.issued_at = in.t;
      request.deadline = in.t + params.tor_deadline;
      request.reason = *in.handover_reason;
      out.tor = request;
      return out;
    }
  }

  // 4. Engagement requests.
  if (in.driver.engage_request) {
    const Mode requested = *in.driver.engage_request;
    if (requested == Mode::Emergency || requested == Mode::Driver) {
      if (requested == Mode::Driver) {
        out.mode = Mode::Driver;
      } else {
        refuse(requested, Refusal::InvalidTarget);
      }
    } else if (in.available.contains(requested)) {
      out.mode = requested;
    } else if (requested != mode) {
      refuse(requested, explain(requested, in));
    }
  }
  out.tor = tor;
  return out;
}

DriverInput input_for(DriverAction action) {
  DriverInput in;
  switch (action) {
    case DriverAction::None: break;
    case DriverAction::Disengage: in.disengage_request = true; break;
    case DriverAction::Override: in.steer_torque = 2.5; break;
    case DriverAction::EngageLongiAdas: in.engage_request = Mode::LongiAdas; break;
    case DriverAction::EngageFullSystem: in.engage_request = Mode::FullSystem; break;
    case DriverAction::Acknowledge: in.acknowledge = true; break;
    case DriverAction::ResetEmergency: in.reset_emergency = true; break;
  }
  return in;
}

std::vector<TruthRow> dump_truth_table(const ArbiterParams& params) {
  std::vector<TruthRow> rows;
  for (Mode mode : kAllModes) {
    for (const auto& bucket : kSpeedBuckets) {
      for (bool secured : {false, true}) {
        for (bool healthy : {false, true}) {
          for (DriverAction action : kAllActions) {
            for (bool ready : {false, true}) {
              SystemHealth health{healthy, true};
              ArbiterInput in;
              in.driver = input_for(action);
              in.readiness = DriverReadiness{ready, ready ? 0.0 : params.monitor_window};
              in.available = available_modes(bucket.v, secured, health, params);
              in.health = health;
              in.steering_override = action == DriverAction::Override;
              in.v = bucket.v;
              in.t = 0.0;
              in.secured = secured;
              in.speed_ok = bucket.v <= params.full_speed_max;
              const auto outcome = step_arbiter(mode, std::nullopt, in, params);
              rows.push_back(TruthRow{mode, bucket, secured, healthy, action, ready, in.available, outcome.mode,
                                      outcome.refusal});
            }
          }
        }
      }
    }
  }
  return rows;
}

std::string truth_table_csv(const std::vector<TruthRow>& rows) {
  std::ostringstream out;
  out << "mode,speed_bucket,speed_mps,secured,healthy,driver_action,driver_ready,available,result,refusal\n";
  for (const auto& r : rows) {
    out << to_string(r.mode) << ',' << r.speed.name << ',' << r.speed.v << ',' << (r.secured ? 1 : 0) << ','
        << (r.healthy ? 1 : 0) << ',' << to_string(r.action) << ',' << (r.ready ? 1 : 0) << ','
        << r.available.to_string() << ',' << to_string(r.result) << ',' << to_string(r.refusal) << '\n';
  }
  return out.str();
}

}  // namespace abv
