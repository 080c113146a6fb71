#pragma once

#include <array>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abv/config.hpp"

namespace abv {

enum class Mode { Driver, LongiAdas, FullSystem, Emergency };
inline constexpr std::array<Mode, 4> kAllModes{Mode::Driver, Mode::LongiAdas, Mode::FullSystem, Mode::Emergency};

std::string_view to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view text);

/// Small bit set over Mode.
class ModeSet {
 public:
  ModeSet() = default;
  ModeSet(std::initializer_list<Mode> modes) {
    for (Mode m : modes) insert(m);
  }
  void insert(Mode m) { bits_ |= bit(m); }
  void erase(Mode m) { bits_ &= ~bit(m); }
  bool contains(Mode m) const { return (bits_ & bit(m)) != 0; }
  bool operator==(const ModeSet&) const = default;
  std::string to_string() const;

 private:
  static unsigned bit(Mode m) { return 1u << static_cast<unsigned>(m); }
  unsigned bits_ = 0;
};

struct DriverInput {
  double steer_torque = 0.0;   // N·m
  double throttle = 0.0;       // [0, 1]
  double brake = 0.0;          // [0, 1]
  std::optional<Mode> engage_request;
  bool disengage_request = false;
  bool acknowledge = false;
  bool reset_emergency = false;

  bool operator==(const DriverInput&) const = default;
};

struct TimedInput {
  double t = 0.0;
  DriverInput input;
};

struct DriverReadiness {
  bool ready = false;
  double last_activity_age = 0.0;   // s; the window length when no activity was seen
};

enum class TorReason { SecuredRoadEnding, SpeedExceeded, SystemFault, SupervisorOrder };
enum class TorState { Pending, Acknowledged, Expired };

std::string_view to_string(TorReason reason);
std::string_view to_string(TorState state);

struct TakeOverRequest {
  double issued_at = 0.0;
  double deadline = 0.0;
  TorReason reason = TorReason::SecuredRoadEnding;
  TorState state = TorState::Pending;
};

struct SystemHealth {
  bool perception_ok = true;
  bool actuation_ok = true;
  bool ok() const { return perception_ok && actuation_ok; }
};

ModeSet available_modes(double v, bool secured, const SystemHealth& health, const ArbiterParams& params = {});

/// True when the input counts as driver activity.
bool is_active(const DriverInput& input, const ArbiterParams& params = {});

DriverReadiness monitor_driver(std::span<const TimedInput> history, double now, double window = 2.0,
                               const ArbiterParams& params = {});

/// Keeps the monitoring window of driver inputs.
class DriverMonitor {
 public:
  explicit DriverMonitor(const ArbiterParams& params = {}) : params_(params) {}
  DriverReadiness update(double t, const DriverInput& input);

 private:
  ArbiterParams params_;
  std::deque<TimedInput> history_;
};

/// Hysteresis on the 50 km/h guard: the guard holds up to speed_max +
/// hysteresis, but an excess above speed_max lasting longer than `dwell`
/// also drops it.
class SpeedGuard {
 public:
  explicit SpeedGuard(const ArbiterParams& params = {}) : params_(params) {}
  bool update(double v, double dt);
  bool excess_sustained() const { return excess_time_ > params_.dwell; }

 private:
  ArbiterParams params_;
  double excess_time_ = 0.0;
};

enum class Refusal { None, NotAvailable, SpeedTooHigh, NotSecured, SystemUnhealthy, EmergencyActive, InvalidTarget };
std::string_view to_string(Refusal refusal);

struct ArbiterInput {
  DriverInput driver;
  DriverReadiness readiness;
  ModeSet available;             // modes whose guards hold now
  SystemHealth health;
  bool steering_override = false;
  /// Set when FullSystem will stop being available soon (secured road ending,
  /// sustained speed excess, supervisor order).
  std::optional<TorReason> handover_reason;
  double v = 0.0;
  double t = 0.0;
  // Guard facts used only to explain refusals.
  bool secured = true;
  bool speed_ok = true;
};

struct ArbiterOutcome {
  Mode mode = Mode::Driver;
  std::optional<TakeOverRequest> tor;
  Refusal refusal = Refusal::None;
  std::optional<Mode> refused_mode;
};

/// One step of the mode state machine. A TOR that is no longer pending is
/// dropped on the next call, after the caller has seen its final state.
ArbiterOutcome step_arbiter(Mode mode, std::optional<TakeOverRequest> tor, const ArbiterInput& input,
                            const ArbiterParams& params = {});

enum class DriverAction { None, Disengage, Override, EngageLongiAdas, EngageFullSystem, Acknowledge, ResetEmergency };
inline constexpr std::array<DriverAction, 7> kAllActions{
    DriverAction::None,           DriverAction::Disengage,        DriverAction::Override,
    DriverAction::EngageLongiAdas, DriverAction::EngageFullSystem, DriverAction::Acknowledge,
    DriverAction::ResetEmergency};
std::string_view to_string(DriverAction action);

struct SpeedBucket {
  std::string_view name;
  double v;
};
inline constexpr std::array<SpeedBucket, 3> kSpeedBuckets{
    SpeedBucket{"standstill", 0.0}, SpeedBucket{"low", 8.33}, SpeedBucket{"high", 19.44}};

struct TruthRow {
  Mode mode;
  SpeedBucket speed;
  bool secured;
  bool healthy;
  DriverAction action;
  bool ready;
  ModeSet available;
  Mode result;
  Refusal refusal;
};

/// Every (mode, speed bucket, secured, health, action, readiness) cell with no
/// pending TOR, evaluated through step_arbiter.
std::vector<TruthRow> dump_truth_table(const ArbiterParams& params = {});
std::string truth_table_csv(const std::vector<TruthRow>& rows);

/// The input a truth-table cell feeds into step_arbiter.
DriverInput input_for(DriverAction action);

}  // namespace abv
