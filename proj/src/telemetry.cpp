#include "abv/telemetry.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

namespace abv {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Protocol

namespace {

void only_keys(const json& j, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool ok = key == "type" || key == "seq";
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ProtocolError("unknown field '" + key + "'");
  }
}

double number(const json& j, const char* key, double lo, double hi, double fallback = 0.0) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) throw ProtocolError(std::string("'") + key + "' must be a number");
  const double v = it->get<double>();
  if (!(v >= lo && v <= hi))
    throw ProtocolError(std::string("'") + key + "' must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        "]");
  return v;
}

bool flag(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return false;
  if (!it->is_boolean()) throw ProtocolError(std::string("'") + key + "' must be a boolean");
  return it->get<bool>();
}

ordered_json sample(const Trajectory& traj, double t_now, const RoadMap& map) {
  ordered_json points = ordered_json::array();
  const double start = std::max(0.0, t_now - traj.t0());
  const double end = std::max(start, traj.horizon());
  for (double t = start; t <= end + 1e-9; t += 0.25) {
    const double s = map.wrap(traj.s0() + traj.distance(t));
    const double d = traj.offset(std::min(t, traj.lateral_duration()));
    const auto pose = frenet_to_global(s, d, map);
    points.push_back({{"t", t - start}, {"s", s}, {"d", d}, {"v", traj.speed(t)}, {"x", pose.position.x()},
                      {"y", pose.position.y()}});
  }
  return points;
}

}  // namespace

ClientCommand parse_command(std::string_view frame) {
  json j;
  try {
    j = json::parse(frame);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("frame must be a JSON object");
  auto type_it = j.find("type");
  if (type_it == j.end() || !type_it->is_string()) throw ProtocolError("frame needs a string 'type'");
  const auto type = type_it->get<std::string>();

  ClientCommand cmd;
  if (type == "driver_input") {
    only_keys(j, {"steer_torque", "throttle", "brake", "acknowledge"});
    cmd.kind = ClientCommand::Kind::DriverInput;
    cmd.input.steer_torque = number(j, "steer_torque", -5.0, 5.0);
    cmd.input.throttle = number(j, "throttle", 0.0, 1.0);
    cmd.input.brake = number(j, "brake", 0.0, 1.0);
    cmd.input.acknowledge = flag(j, "acknowledge");
  } else if (type == "engage") {
    only_keys(j, {"mode"});
    cmd.kind = ClientCommand::Kind::Engage;
    auto it = j.find("mode");
    if (it == j.end() || !it->is_string()) throw ProtocolError("engage needs a string 'mode'");
    auto mode = parse_mode(it->get<std::string>());
    if (!mode) throw ProtocolError("unknown mode '" + it->get<std::string>() + "'");
    cmd.input.engage_request = *mode;
  } else if (type == "disengage") {
    only_keys(j, {});
    cmd.kind = ClientCommand::Kind::Disengage;
    cmd.input.disengage_request = true;
  } else if (type == "reset_emergency") {
    only_keys(j, {});
    cmd.kind = ClientCommand::Kind::ResetEmergency;
    cmd.input.reset_emergency = true;
  } else if (type == "pause") {
    only_keys(j, {"paused"});
    cmd.kind = ClientCommand::Kind::Pause;
    cmd.paused = j.contains("paused") ? flag(j, "paused") : true;
  } else {
    throw ProtocolError("unknown frame type '" + type + "'");
  }
  return cmd;
}

std::string snapshot_frame(const Simulation& sim, bool paused) {
  const auto& map = sim.map();
  const double now = sim.time();
  ordered_json j;
  j["type"] = "snapshot";
  j["schema_version"] = kTelemetrySchemaVersion;
  j["step"] = sim.step_index();
  j["t"] = now;
  j["paused"] = paused;

  ordered_json segments = ordered_json::array();
  for (std::size_t i = 0; i < map.segments().size(); ++i) {
    const auto& seg = map.segments()[i];
    segments.push_back({{"id", seg.id},
                        {"start", map.segment_start(i)},
                        {"length", seg.length},
                        {"curvature", seg.curvature},
                        {"lane_count", seg.lane_count},
                        {"lane_width", seg.lane_width},
                        {"speed_limit", seg.speed_limit},
                        {"secured", seg.secured},
                        {"has_emergency_lane", seg.has_emergency_lane}});
  }
  j["road"] = {{"closed", map.closed()}, {"length", map.total_length()}, {"segments", segments}};

  ordered_json vehicles = ordered_json::array();
  for (const auto& a : sim.agents()) {
    if (a.exited) continue;
    const auto pose = frenet_to_global(a.state.s, a.state.d, map);
    ordered_json v{{"id", a.id},
                   {"ego", a.ego},
                   {"abv", a.abv.has_value()},
                   {"s", a.state.s},
                   {"d", a.state.d},
                   {"x", pose.position.x()},
                   {"y", pose.position.y()},
                   {"heading", wrap_angle(pose.heading + a.state.heading_err)},
                   {"v", a.state.v},
                   {"a", a.state.a},
                   {"lane", a.state.lane},
                   {"length", a.length}};
    v["mode"] = a.abv ? ordered_json(std::string(to_string(a.abv->mode))) : ordered_json();
    vehicles.push_back(std::move(v));
  }
  j["vehicles"] = std::move(vehicles);

  ordered_json obstacles = ordered_json::array();
  for (const auto& o : sim.obstacles()) {
    const auto pose = frenet_to_global(o.s, o.d, map);
    obstacles.push_back(
        {{"id", o.id}, {"s", o.s}, {"d", o.d}, {"x", pose.position.x()}, {"y", pose.position.y()}, {"length", o.length}});
  }
  j["obstacles"] = std::move(obstacles);

  const Agent* ego = sim.ego();
  if (ego && ego->abv) {
    const auto& st = *ego->abv;
    ordered_json e;
    e["id"] = ego->id;
    e["mode"] = std::string(to_string(st.mode));
    if (st.tor) {
      e["tor"] = {{"reason", std::string(to_string(st.tor->reason))},
                  {"state", std::string(to_string(st.tor->state))},
                  {"issued_at", st.tor->issued_at},
                  {"deadline", st.tor->deadline},
                  {"remaining", std::max(0.0, st.tor->deadline - now)}};
    } else {
      e["tor"] = nullptr;
    }
    const bool secured = map.on_map(st.estimate.s) && map.segment_at(st.estimate.s).secured;
    ordered_json available = ordered_json::array();
    const auto modes = available_modes(st.estimate.v, secured, st.health, sim.config().arbiter);
    for (Mode m : kAllModes)
      if (modes.contains(m)) available.push_back(std::string(to_string(m)));
    e["available_modes"] = std::move(available);
    e["speed"] = ego->state.v;
    e["speed_limit"] = map.segment_clamped(ego->state.s).speed_limit;
    e["advised_limit"] = sim.limits().at(map, ego->state.s);
    e["trajectory"] = st.mode == Mode::FullSystem && st.plan ? sample(st.plan->nominal, now, map) : ordered_json();
    if (st.mode == Mode::Emergency && st.mrs) {
      e["mrs"] = sample(*st.mrs, now, map);
    } else if (st.plan) {
      e["mrs"] = sample(st.plan->mrs, now, map);
    } else {
      e["mrs"] = nullptr;
    }
    ordered_json candidates = ordered_json::array();
    if (st.plan) {
      for (const auto& c : st.plan->candidates) {
        ordered_json reasons = ordered_json::array();
        for (auto r : c.reasons) reasons.push_back(std::string(to_string(r)));
        candidates.push_back({{"maneuver", std::string(to_string(c.maneuver().kind))},
                              {"target_lane", c.maneuver().target_lane},
                              {"target_speed", c.maneuver().target_speed},
                              {"feasible", c.feasible},
                              {"cost", c.feasible ? ordered_json(c.cost) : ordered_json()},
                              {"reasons", std::move(reasons)}});
      }
    }
    e["candidates"] = std::move(candidates);
    e["shared_control"] = {{"assist_torque", st.shared.assist_torque},
                           {"driver_torque", st.shared.driver_torque},
                           {"applied_torque", st.shared.applied_torque},
                           {"override_active", st.shared.override_active},
                           {"authority", st.shared.authority},
                           {"pedal_feedback", st.shared.pedal_feedback}};
    e["applied_input"] = {{"steer_torque", st.input.steer_torque},
                          {"throttle", st.input.throttle},
                          {"brake", st.input.brake},
                          {"acknowledge", st.input.acknowledge}};
    int confirmed = 0;
    for (const auto& t : st.tracks) confirmed += t.confirmed ? 1 : 0;
    e["confirmed_tracks"] = confirmed;
    e["sensing_range"] = sim.config().perception.camera_range;
    j["ego"] = std::move(e);
  } else {
    j["ego"] = nullptr;
  }

  ordered_json recs = ordered_json::array();
  for (const auto& r : sim.supervisor().active())
    if (r.live(now))
      recs.push_back({{"segment_id", r.segment_id},
                      {"advised_limit", r.advised_limit},
                      {"issued_at", r.issued_at},
                      {"ttl", r.ttl}});
  j["recommendations"] = std::move(recs);
  j["metrics"] = to_json(sim.metrics());
  if (auto loop = sim.last_applied_input()) {
    j["input_loopback"] = {{"received_step", loop->first}, {"applied_step", loop->second}};
  } else {
    j["input_loopback"] = nullptr;
  }
  return j.dump();
}

std::string refusal_frame(const RefusalNotice& notice, Mode current) {
  ordered_json j{{"type", "refusal"},
                 {"schema_version", kTelemetrySchemaVersion},
                 {"step", notice.step},
                 {"t", notice.t},
                 {"requested", std::string(to_string(notice.requested))},
                 {"reason", std::string(to_string(notice.reason))},
                 {"mode", std::string(to_string(current))}};
  return j.dump();
}

std::string error_frame(std::string_view message) {
  ordered_json j{{"type", "error"}, {"schema_version", kTelemetrySchemaVersion}, {"message", std::string(message)}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Server

namespace {

constexpr std::size_t kMaxQueued = 64;

std::string driver_taken_frame() {
  ordered_json j{{"type", "refusal"},
                 {"schema_version", kTelemetrySchemaVersion},
                 {"requested", "driver_session"},
                 {"reason", "driver_session_taken"}};
  return j.dump();
}

}  // namespace

class Session;

struct TelemetryServer::Impl : std::enable_shared_from_this<TelemetryServer::Impl> {
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  unsigned short bound_port = 0;

  // io-thread only
  std::set<std::shared_ptr<Session>> sessions;
  Session* driver = nullptr;

  std::mutex mutex;
  std::vector<Inbound> inbound;
  std::atomic<bool> driver_flag{false};
  std::atomic<int> viewers{0};

  void push(Inbound in) {
    std::lock_guard<std::mutex> lock(mutex);
    inbound.push_back(std::move(in));
  }
  void accept();
  void broadcast(const std::shared_ptr<const std::string>& frame);
  void to_driver(const std::shared_ptr<const std::string>& frame);
};

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, std::shared_ptr<TelemetryServer::Impl> server)
      : ws_(std::move(socket)), server_(std::move(server)) {}

  void run() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     beast::bind_front_handler(&Session::on_request, shared_from_this()));
  }

  void send(std::shared_ptr<const std::string> frame) {
    if (!open_) return;
    if (queue_.size() >= kMaxQueued) queue_.erase(queue_.begin() + 1);   // drop the oldest not in flight
    queue_.push_back(std::move(frame));
    if (queue_.size() == 1) write();
  }

  void close() {
    if (!open_) return;
    closing_ = true;
    if (queue_.empty()) shutdown();
  }

  TelemetryServer::Role role() const { return role_; }
  bool registered() const { return registered_; }

 private:
  void on_request(beast::error_code ec, std::size_t) {
    if (ec || !websocket::is_upgrade(request_)) return;
    const std::string target(request_.target());
    bool known = true;
    if (target == "/driver") {
      role_ = TelemetryServer::Role::Driver;
    } else if (target == "/viewer" || target == "/") {
      role_ = TelemetryServer::Role::Viewer;
    } else {
      known = false;
    }
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request_, [self = shared_from_this(), known](beast::error_code ec2) { self->on_accept(ec2, known); });
  }

  void on_accept(beast::error_code ec, bool known) {
    if (ec) return;
    open_ = true;
    ws_.text(true);
    if (!known) {
      send(std::make_shared<const std::string>(error_frame("unknown endpoint; use /driver or /viewer")));
      close();
      read();
      return;
    }
    if (role_ == TelemetryServer::Role::Driver && server_->driver != nullptr) {
      send(std::make_shared<const std::string>(driver_taken_frame()));
      close();
      read();
      return;
    }
    registered_ = true;
    server_->sessions.insert(shared_from_this());
    if (role_ == TelemetryServer::Role::Driver) {
      server_->driver = this;
      server_->driver_flag = true;
    } else {
      ++server_->viewers;
    }
    server_->push({TelemetryServer::Inbound::Kind::Connected, role_, {}});
    read();
  }

  void read() { ws_.async_read(buffer_, beast::bind_front_handler(&Session::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    if (registered_) {
      try {
        auto cmd = parse_command(text);
        if (role_ != TelemetryServer::Role::Driver) throw ProtocolError("viewer sessions cannot send commands");
        server_->push({TelemetryServer::Inbound::Kind::Command, role_, cmd});
      } catch (const ProtocolError& e) {
        send(std::make_shared<const std::string>(error_frame(e.what())));
      }
    }
    read();
  }

  void write() {
    ws_.async_write(net::buffer(*queue_.front()), beast::bind_front_handler(&Session::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty()) {
      write();
    } else if (closing_) {
      shutdown();
    }
  }

  void shutdown() {
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  void finish() {
    if (!open_) return;
    open_ = false;
    queue_.clear();
    if (!registered_) return;
    registered_ = false;
    if (server_->driver == this) {
      server_->driver = nullptr;
      server_->driver_flag = false;
    } else {
      --server_->viewers;
    }
    server_->push({TelemetryServer::Inbound::Kind::Disconnected, role_, {}});
    server_->sessions.erase(shared_from_this());
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<TelemetryServer::Impl> server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  TelemetryServer::Role role_ = TelemetryServer::Role::Viewer;
  bool open_ = false;
  bool closing_ = false;
  bool registered_ = false;
};

void TelemetryServer::Impl::accept() {
  acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<Session>(std::move(socket), self)->run();
    self->accept();
  });
}

void TelemetryServer::Impl::broadcast(const std::shared_ptr<const std::string>& frame) {
  for (const auto& s : sessions) s->send(frame);
}

void TelemetryServer::Impl::to_driver(const std::shared_ptr<const std::string>& frame) {
  if (driver) driver->send(frame);
}

TelemetryServer::TelemetryServer(unsigned short port, std::string address) : impl_(std::make_shared<Impl>()) {
  const tcp::endpoint endpoint{net::ip::make_address(address), port};
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen();
  impl_->bound_port = impl_->acceptor.local_endpoint().port();
}

TelemetryServer::~TelemetryServer() { stop(); }

void TelemetryServer::start() {
  if (impl_->thread.joinable()) return;
  impl_->accept();
  impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
}

void TelemetryServer::stop() {
  if (!impl_->thread.joinable()) return;
  net::post(impl_->ioc, [impl = impl_] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    for (const auto& s : std::vector<std::shared_ptr<Session>>(impl->sessions.begin(), impl->sessions.end()))
      s->close();
  });
  // Give the close handshakes a moment, then stop the loop.
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  impl_->ioc.stop();
  impl_->thread.join();
  impl_->sessions.clear();
}

unsigned short TelemetryServer::port() const { return impl_->bound_port; }

std::vector<TelemetryServer::Inbound> TelemetryServer::drain() {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return std::exchange(impl_->inbound, {});
}

void TelemetryServer::publish(std::string frame) {
  auto shared = std::make_shared<const std::string>(std::move(frame));
  net::post(impl_->ioc, [impl = impl_, shared] { impl->broadcast(shared); });
}

void TelemetryServer::send_to_driver(std::string frame) {
  auto shared = std::make_shared<const std::string>(std::move(frame));
  net::post(impl_->ioc, [impl = impl_, shared] { impl->to_driver(shared); });
}

bool TelemetryServer::driver_connected() const { return impl_->driver_flag; }
int TelemetryServer::viewer_count() const { return impl_->viewers; }

// ---------------------------------------------------------------------------

void serve(Simulation& sim, TelemetryServer& server, const ServeOptions& options) {
  using clock = std::chrono::steady_clock;
  bool paused = false;
  DriverInput held;   // continuous inputs of the driver session
  double next_snapshot = sim.time();
  double paced_time = sim.time();
  auto wall_origin = clock::now();

  auto stopped = [&] { return options.stop && options.stop->load(); };
  while (!sim.finished() && !stopped()) {
    for (const auto& in : server.drain()) {
      if (in.role != TelemetryServer::Role::Driver) continue;
      switch (in.kind) {
        case TelemetryServer::Inbound::Kind::Connected:
          sim.attach_driver(true);
          held = DriverInput{};
          break;
        case TelemetryServer::Inbound::Kind::Disconnected:
          // An unplugged cockpit is an inert driver, not a scripted one.
          held = DriverInput{};
          sim.set_driver_input(held, sim.step_index());
          break;
        case TelemetryServer::Inbound::Kind::Command: {
          const auto& cmd = in.command;
          if (cmd.kind == ClientCommand::Kind::Pause) {
            paused = cmd.paused;
            break;
          }
          DriverInput input = held;
          if (cmd.kind == ClientCommand::Kind::DriverInput) {
            held = cmd.input;
            held.acknowledge = false;
            input = cmd.input;
          } else {
            input.engage_request = cmd.input.engage_request;
            input.disengage_request = cmd.input.disengage_request;
            input.reset_emergency = cmd.input.reset_emergency;
          }
          sim.set_driver_input(input, sim.step_index());
          break;
        }
      }
    }

    if (paused) {
      server.publish(snapshot_frame(sim, true));
      std::this_thread::sleep_for(std::chrono::duration<double>(options.snapshot_period / options.real_time_factor));
      wall_origin = clock::now();
      paced_time = sim.time();
      continue;
    }

    sim.step();
    const Agent* ego = sim.ego();
    for (const auto& notice : sim.take_refusals())
      server.send_to_driver(refusal_frame(notice, ego && ego->abv ? ego->abv->mode : Mode::Driver));
    if (sim.time() >= next_snapshot - 1e-9) {
      server.publish(snapshot_frame(sim, false));
      next_snapshot += options.snapshot_period;
    }
    const auto due = wall_origin + std::chrono::duration_cast<clock::duration>(
                                       std::chrono::duration<double>((sim.time() - paced_time) / options.real_time_factor));
    std::this_thread::sleep_until(due);
  }
  server.publish(snapshot_frame(sim, paused));
}

}  // namespace abv
