#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "abv/simulation.hpp"

namespace abv {

inline constexpr int kTelemetrySchemaVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A command frame from a cockpit client.
struct ClientCommand {
  enum class Kind { DriverInput, Engage, Disengage, ResetEmergency, Pause };
  Kind kind = Kind::DriverInput;
  DriverInput input;   // the driver-side meaning of the frame
  bool paused = false;
};

/// Throws ProtocolError on malformed JSON, unknown types, unknown keys or
/// out-of-range values.
ClientCommand parse_command(std::string_view frame);

struct InputLoopback {
  long received_step = 0;
  long applied_step = 0;
};

std::string snapshot_frame(const Simulation& sim, bool paused);
std::string refusal_frame(const RefusalNotice& notice, Mode current);
std::string error_frame(std::string_view message);

/// WebSocket server: `/driver` (at most one session) and `/viewer` (any
/// number). The simulation never sees the network; it exchanges immutable
/// strings and parsed commands through two queues.
class TelemetryServer {
 public:
  enum class Role { Driver, Viewer };

  struct Inbound {
    enum class Kind { Connected, Disconnected, Command };
    Kind kind = Kind::Command;
    Role role = Role::Viewer;
    ClientCommand command;
  };

  /// Port 0 picks a free port.
  explicit TelemetryServer(unsigned short port, std::string address = "127.0.0.1");
  ~TelemetryServer();
  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  void start();
  void stop();
  unsigned short port() const;

  std::vector<Inbound> drain();
  void publish(std::string frame);
  void send_to_driver(std::string frame);
  bool driver_connected() const;
  int viewer_count() const;

 private:
  friend class Session;
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

struct ServeOptions {
  double real_time_factor = 1.0;   // sim seconds per wall second
  double snapshot_period = 0.05;   // 20 Hz in sim time
  const std::atomic<bool>* stop = nullptr;
};

/// Wall-clock paced loop: commands are applied at the next step boundary,
/// snapshots go out every snapshot_period, refusals to the driver session.
void serve(Simulation& sim, TelemetryServer& server, const ServeOptions& options = {});

}  // namespace abv
