#include "abv/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace abv {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Persona persona) {
  switch (persona) {
    case Persona::Attentive: return "attentive";
    case Persona::Distracted: return "distracted";
    case Persona::Absent: return "absent";
    case Persona::Auto: return "auto";
  }
  return "?";
}

std::optional<Persona> parse_persona(std::string_view text) {
  for (Persona p : {Persona::Attentive, Persona::Distracted, Persona::Absent, Persona::Auto})
    if (to_string(p) == text) return p;
  return std::nullopt;
}

std::optional<double> acknowledge_delay(Persona persona) {
  switch (persona) {
    case Persona::Attentive: return 1.2;
    case Persona::Distracted: return 8.0;
    case Persona::Auto: return 1.2;
    case Persona::Absent: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view to_string(EventType type) {
  switch (type) {
    case EventType::ObstacleSpawn: return "obstacle_spawn";
    case EventType::SecuredEndOverride: return "secured_end_override";
    case EventType::SensorFault: return "sensor_fault";
    case EventType::DriverInput: return "driver_input";
  }
  return "?";
}

namespace {

std::optional<EventType> parse_event_type(std::string_view text) {
  for (EventType e : {EventType::ObstacleSpawn, EventType::SecuredEndOverride, EventType::SensorFault,
                      EventType::DriverInput})
    if (to_string(e) == text) return e;
  return std::nullopt;
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

struct Problem {
  std::string path;
  std::string message;
};

// Input iterator that counts the newlines the parser has consumed.
struct CountingIterator {
  using iterator_category = std::input_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  const char* p = nullptr;
  int* line = nullptr;

  reference operator*() const { return *p; }
  CountingIterator& operator++() {
    if (*p == '\n') ++*line;
    ++p;
    return *this;
  }
  CountingIterator operator++(int) {
    auto copy = *this;
    ++*this;
    return copy;
  }
  bool operator==(const CountingIterator& o) const { return p == o.p; }
};

// SAX pass recording the source line of every key and array element.
class LineIndex {
 public:
  explicit LineIndex(std::string_view text) {
    CountingIterator first{text.data(), &line_};
    CountingIterator last{text.data() + text.size(), &line_};
    json::sax_parse(first, last, this);
  }

  std::optional<int> find(std::string path) const {
    while (true) {
      auto it = lines_.find(path);
      if (it != lines_.end()) return it->second;
      const auto cut = path.find_last_of(".[");
      if (cut == std::string::npos) return std::nullopt;
      path.resize(cut);
    }
  }

  bool null() { return value(); }
  bool boolean(bool) { return value(); }
  bool number_integer(json::number_integer_t) { return value(); }
  bool number_unsigned(json::number_unsigned_t) { return value(); }
  bool number_float(json::number_float_t, const std::string&) { return value(); }
  bool string(std::string&) { return value(); }
  bool binary(json::binary_t&) { return value(); }
  bool start_object(std::size_t) { return open(false); }
  bool start_array(std::size_t) { return open(true); }
  bool end_object() { return close(); }
  bool end_array() { return close(); }
  bool key(std::string& k) {
    auto& top = stack_.back();
    top.key = k;
    lines_.emplace(join(top.path, k), line_);
    return true;
  }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception&) { return false; }

 private:
  struct Frame {
    bool array = false;
    std::string path;
    std::string key;
    std::size_t count = 0;
  };

  std::string element_path() {
    if (stack_.empty()) return "";
    auto& top = stack_.back();
    if (!top.array) return join(top.path, top.key);
    auto path = index(top.path, top.count++);
    lines_.emplace(path, line_);
    return path;
  }
  bool value() {
    element_path();
    return true;
  }
  bool open(bool array) {
    stack_.push_back(Frame{array, element_path(), "", 0});
    return true;
  }
  bool close() {
    stack_.pop_back();
    return true;
  }

  int line_ = 1;
  std::vector<Frame> stack_;
  std::map<std::string, int> lines_;
};

class Reader {
 public:
  std::vector<Problem> problems;

  void fail(const std::string& path, std::string message) { problems.push_back({path, std::move(message)}); }

  bool expect_object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  void allow_keys(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, value] : obj.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || a == key;
      if (!ok) fail(join(path, key), "unknown key");
    }
  }

  void require(const json& obj, const std::string& path, std::string_view key) {
    if (!obj.contains(key)) fail(path, "missing required key '" + std::string(key) + "'");
  }

  template <typename T>
  bool read(const json& obj, const std::string& path, std::string_view key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return false;
    const std::string where = join(path, key);
    const json& v = *it;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return type_error(where, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) return type_error(where, "an integer");
      out = v.get<int>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) return type_error(where, "a non-negative integer");
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) return type_error(where, "a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return type_error(where, "a string");
      out = v.get<std::string>();
    }
    return true;
  }

  template <typename T>
  bool read(const json& obj, const std::string& path, std::string_view key, std::optional<T>& out) {
    T value{};
    if (!read(obj, path, key, value)) return false;
    out = value;
    return true;
  }

  std::optional<Mode> read_mode(const json& obj, const std::string& path, std::string_view key) {
    std::string text;
    if (!read(obj, path, key, text)) return std::nullopt;
    auto mode = parse_mode(text);
    if (!mode) fail(join(path, key), "unknown mode '" + text + "'");
    return mode;
  }

 private:
  bool type_error(const std::string& where, const char* expected) {
    fail(where, std::string("expected ") + expected);
    return false;
  }
};

RoadSegment read_segment(Reader& r, const json& j, const std::string& path, int default_id) {
  RoadSegment seg;
  seg.id = default_id;
  if (!r.expect_object(j, path)) return seg;
  r.allow_keys(j, path,
               {"id", "length", "curvature", "lane_count", "lane_width", "speed_limit", "secured",
                "has_emergency_lane", "marking_quality", "instrumented"});
  r.require(j, path, "length");
  r.read(j, path, "id", seg.id);
  r.read(j, path, "length", seg.length);
  r.read(j, path, "curvature", seg.curvature);
  r.read(j, path, "lane_count", seg.lane_count);
  r.read(j, path, "lane_width", seg.lane_width);
  r.read(j, path, "speed_limit", seg.speed_limit);
  r.read(j, path, "secured", seg.secured);
  r.read(j, path, "has_emergency_lane", seg.has_emergency_lane);
  r.read(j, path, "marking_quality", seg.marking_quality);
  r.read(j, path, "instrumented", seg.instrumented);
  // validate() reports "segment <id>: <field> ..."; re-anchor on the JSON path.
  for (const auto& message : validate(seg)) {
    const auto colon = message.find(": ");
    const std::string rest = colon == std::string::npos ? message : message.substr(colon + 2);
    std::string field = rest.substr(0, rest.find(' '));
    if (field.starts_with("|")) field = "curvature";
    r.fail(join(path, field), rest);
  }
  return seg;
}

std::optional<RoadMap> read_road(Reader& r, const json& j, const std::string& path) {
  if (!r.expect_object(j, path)) return std::nullopt;
  r.allow_keys(j, path, {"closed", "segments"});
  r.require(j, path, "segments");
  bool closed = false;
  r.read(j, path, "closed", closed);
  auto it = j.find("segments");
  if (it == j.end()) return std::nullopt;
  const std::string seg_path = join(path, "segments");
  if (!it->is_array() || it->empty()) {
    r.fail(seg_path, "expected a non-empty array");
    return std::nullopt;
  }
  const std::size_t before = r.problems.size();
  std::vector<RoadSegment> segments;
  std::set<int> ids;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto p = index(seg_path, i);
    segments.push_back(read_segment(r, (*it)[i], p, static_cast<int>(i)));
    if (!ids.insert(segments.back().id).second) r.fail(join(p, "id"), "duplicate segment id");
  }
  if (r.problems.size() != before) return std::nullopt;
  return RoadMap(std::move(segments), closed);
}

EgoSpec read_ego(Reader& r, const json& j, const std::string& path) {
  EgoSpec ego;
  if (!r.expect_object(j, path)) return ego;
  r.allow_keys(j, path, {"s", "lane", "v", "mode", "persona", "desired_speed"});
  r.read(j, path, "s", ego.s);
  r.read(j, path, "lane", ego.lane);
  r.read(j, path, "v", ego.v);
  if (auto m = r.read_mode(j, path, "mode")) ego.mode = *m;
  std::string persona;
  if (r.read(j, path, "persona", persona)) {
    if (auto p = parse_persona(persona)) {
      ego.persona = *p;
    } else {
      r.fail(join(path, "persona"), "unknown persona '" + persona + "'");
    }
  }
  r.read(j, path, "desired_speed", ego.desired_speed);
  return ego;
}

TrafficSpec read_traffic(Reader& r, const json& j, const std::string& path) {
  TrafficSpec t;
  if (!r.expect_object(j, path)) return t;
  r.allow_keys(j, path,
               {"density", "count", "penetration", "speed_factor_min", "speed_factor_max", "region_start",
                "region_end", "length"});
  r.read(j, path, "density", t.density);
  r.read(j, path, "count", t.count);
  r.read(j, path, "penetration", t.penetration);
  r.read(j, path, "speed_factor_min", t.speed_factor_min);
  r.read(j, path, "speed_factor_max", t.speed_factor_max);
  r.read(j, path, "region_start", t.region_start);
  r.read(j, path, "region_end", t.region_end);
  r.read(j, path, "length", t.length);
  return t;
}

ScenarioEvent read_event(Reader& r, const json& j, const std::string& path) {
  ScenarioEvent e;
  if (!r.expect_object(j, path)) return e;
  r.require(j, path, "t");
  r.require(j, path, "type");
  r.read(j, path, "t", e.t);
  std::string type;
  if (!r.read(j, path, "type", type)) return e;
  auto parsed = parse_event_type(type);
  if (!parsed) {
    r.fail(join(path, "type"), "unknown event type '" + type + "'");
    return e;
  }
  e.type = *parsed;
  switch (e.type) {
    case EventType::ObstacleSpawn:
      r.allow_keys(j, path, {"t", "type", "s", "ahead", "lane"});
      r.read(j, path, "s", e.s);
      r.read(j, path, "ahead", e.ahead);
      r.read(j, path, "lane", e.lane);
      if (e.s.has_value() == e.ahead.has_value()) r.fail(path, "obstacle_spawn needs exactly one of 's' or 'ahead'");
      break;
    case EventType::SecuredEndOverride:
      r.allow_keys(j, path, {"t", "type", "segment", "notice"});
      r.read(j, path, "segment", e.segment);
      r.read(j, path, "notice", e.notice);
      break;
    case EventType::SensorFault:
      r.allow_keys(j, path, {"t", "type", "subsystem"});
      r.read(j, path, "subsystem", e.subsystem);
      break;
    case EventType::DriverInput:
      r.allow_keys(j, path,
                   {"t", "type", "steer_torque", "throttle", "brake", "engage", "disengage", "acknowledge",
                    "reset_emergency", "duration"});
      r.read(j, path, "steer_torque", e.input.steer_torque);
      r.read(j, path, "throttle", e.input.throttle);
      r.read(j, path, "brake", e.input.brake);
      e.input.engage_request = r.read_mode(j, path, "engage");
      r.read(j, path, "disengage", e.input.disengage_request);
      r.read(j, path, "acknowledge", e.input.acknowledge);
      r.read(j, path, "reset_emergency", e.input.reset_emergency);
      r.read(j, path, "duration", e.duration);
      break;
  }
  return e;
}

std::vector<Problem> check(const Scenario& sc) {
  std::vector<Problem> out;
  auto fail = [&](std::string path, std::string msg) { out.push_back({std::move(path), std::move(msg)}); };
  const auto& map = sc.map;
  const bool have_map = !map.segments().empty();

  if (sc.schema_version != kScenarioSchemaVersion)
    fail("schema_version", "unsupported version " + std::to_string(sc.schema_version) + " (expected " +
                               std::to_string(kScenarioSchemaVersion) + ")");
  if (!(sc.duration > 0.0) || !std::isfinite(sc.duration)) fail("duration", "must be finite and > 0");
  if (sc.gantry_s && have_map && !map.on_map(*sc.gantry_s)) fail("gantry_s", "not on the road");

  if (sc.ego && have_map) {
    const auto& ego = *sc.ego;
    if (!map.on_map(ego.s)) {
      fail("ego.s", "not on the road");
    } else if (ego.lane < 0 || ego.lane >= map.segment_at(ego.s).lane_count) {
      fail("ego.lane", "no such lane at s = " + std::to_string(ego.s));
    }
    if (!(ego.v >= 0.0)) fail("ego.v", "must be >= 0");
    if (!(ego.desired_speed > 0.0)) fail("ego.desired_speed", "must be > 0");
    if (ego.mode == Mode::Emergency) fail("ego.mode", "cannot start in Emergency");
    if (ego.mode == Mode::FullSystem && map.on_map(ego.s)) {
      const auto ap = sc.config().arbiter;
      if (!map.segment_at(ego.s).secured) fail("ego.mode", "FullSystem needs a secured segment at the start");
      if (ego.v > ap.full_speed_max + ap.hysteresis) fail("ego.mode", "FullSystem needs v <= 50 km/h at the start");
    }
  }

  if (sc.traffic) {
    const auto& t = *sc.traffic;
    if (!(t.penetration >= 0.0 && t.penetration <= 1.0)) fail("traffic.penetration", "must lie in [0, 1]");
    if (!(t.density >= 0.0)) fail("traffic.density", "must be >= 0");
    if (t.count < 0) fail("traffic.count", "must be >= 0");
    if (!(t.speed_factor_min > 0.0)) fail("traffic.speed_factor_min", "must be > 0");
    if (!(t.speed_factor_max >= t.speed_factor_min)) fail("traffic.speed_factor_max", "must be >= speed_factor_min");
    if (!(t.length > 0.0)) fail("traffic.length", "must be > 0");
    if (t.region_end >= 0.0 && !(t.region_end > t.region_start)) fail("traffic.region_end", "must exceed region_start");
  }

  double previous = 0.0;
  for (std::size_t i = 0; i < sc.events.size(); ++i) {
    const auto& e = sc.events[i];
    const std::string p = index("events", i);
    if (!(e.t >= 0.0 && e.t <= sc.duration)) fail(p + ".t", "must lie in [0, duration]");
    if (e.t < previous) fail(p + ".t", "events must be time-ordered");
    previous = std::max(previous, e.t);
    switch (e.type) {
      case EventType::ObstacleSpawn:
        if (e.ahead && !sc.ego) fail(p + ".ahead", "relative spawn needs an ego");
        if (e.ahead && !(*e.ahead >= 0.0)) fail(p + ".ahead", "must be >= 0");
        if (e.s && have_map && !map.on_map(*e.s)) fail(p + ".s", "not on the road");
        if (e.s && have_map && map.on_map(*e.s)) {
          const auto& seg = map.segment_at(*e.s);
          const int lowest = seg.has_emergency_lane ? -1 : 0;
          if (e.lane < lowest || e.lane >= seg.lane_count) fail(p + ".lane", "no such lane");
        }
        break;
      case EventType::SecuredEndOverride:
        if (e.segment && have_map) {
          bool found = false;
          for (const auto& seg : map.segments()) found = found || seg.id == *e.segment;
          if (!found) fail(p + ".segment", "no segment with id " + std::to_string(*e.segment));
        }
        if (!(e.notice >= 0.0)) fail(p + ".notice", "must be >= 0");
        break;
      case EventType::SensorFault:
        if (e.subsystem != "perception" && e.subsystem != "actuation")
          fail(p + ".subsystem", "must be 'perception' or 'actuation'");
        break;
      case EventType::DriverInput:
        if (!sc.ego) fail(p, "driver input needs an ego");
        if (!(e.input.throttle >= 0.0 && e.input.throttle <= 1.0)) fail(p + ".throttle", "must lie in [0, 1]");
        if (!(e.input.brake >= 0.0 && e.input.brake <= 1.0)) fail(p + ".brake", "must lie in [0, 1]");
        if (!std::isfinite(e.input.steer_torque)) fail(p + ".steer_torque", "must be finite");
        if (!(e.duration >= 0.0)) fail(p + ".duration", "must be >= 0");
        if (e.t + e.duration > sc.duration + 1e-9) fail(p + ".duration", "runs past the scenario end");
        break;
    }
  }

  const auto& registry = ConfigRegistry::instance();
  for (const auto& [key, value] : sc.overrides) {
    if (!registry.contains(key)) fail(join("config", key), "unknown configuration key");
    if (!std::isfinite(value)) fail(join("config", key), "must be finite");
  }
  return out;
}

std::string format(const Problem& p, const LineIndex* lines) {
  std::string out;
  if (lines)
    if (auto line = lines->find(p.path)) out = "line " + std::to_string(*line) + ": ";
  return out + (p.path.empty() ? "<root>" : p.path) + ": " + p.message;
}

int line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> problems)
    : std::runtime_error([&] {
        std::string msg = "invalid scenario";
        for (const auto& p : problems) msg += "\n  " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

std::vector<std::string> validate(const Scenario& scenario) {
  std::vector<std::string> out;
  for (const auto& p : check(scenario)) out.push_back(format(p, nullptr));
  return out;
}

Scenario parse_scenario(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const int line = line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ScenarioError({"line " + std::to_string(line) + ": " + e.what()});
  }
  const LineIndex lines(text);

  Reader r;
  Scenario sc;
  if (r.expect_object(doc, "")) {
    r.allow_keys(doc, "",
                 {"schema_version", "name", "duration", "seed", "road", "ego", "traffic", "events", "gantry_s",
                  "config"});
    r.require(doc, "", "schema_version");
    r.require(doc, "", "duration");
    r.require(doc, "", "road");
    r.read(doc, "", "schema_version", sc.schema_version);
    r.read(doc, "", "name", sc.name);
    r.read(doc, "", "duration", sc.duration);
    r.read(doc, "", "seed", sc.seed);
    r.read(doc, "", "gantry_s", sc.gantry_s);
    if (doc.contains("road"))
      if (auto map = read_road(r, doc["road"], "road")) sc.map = std::move(*map);
    if (doc.contains("ego")) sc.ego = read_ego(r, doc["ego"], "ego");
    if (doc.contains("traffic")) sc.traffic = read_traffic(r, doc["traffic"], "traffic");
    if (auto it = doc.find("events"); it != doc.end()) {
      if (!it->is_array()) {
        r.fail("events", "expected an array");
      } else {
        for (std::size_t i = 0; i < it->size(); ++i) sc.events.push_back(read_event(r, (*it)[i], index("events", i)));
      }
    }
    if (auto it = doc.find("config"); it != doc.end() && r.expect_object(*it, "config")) {
      for (const auto& [key, value] : it->items()) {
        if (!value.is_number()) {
          r.fail(join("config", key), "expected a number");
          continue;
        }
        sc.overrides[key] = value.get<double>();
      }
    }
  }

  auto problems = r.problems;
  for (auto& p : check(sc)) problems.push_back(std::move(p));
  if (!problems.empty()) {
    std::vector<std::string> messages;
    for (const auto& p : problems) messages.push_back(format(p, &lines));
    throw ScenarioError(std::move(messages));
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError({path + ": cannot open file"});
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

ordered_json to_json(const Scenario& sc) {
  ordered_json j;
  j["schema_version"] = sc.schema_version;
  j["name"] = sc.name;
  j["duration"] = sc.duration;
  j["seed"] = sc.seed;
  ordered_json segments = ordered_json::array();
  for (const auto& seg : sc.map.segments()) {
    segments.push_back({{"id", seg.id},
                        {"length", seg.length},
                        {"curvature", seg.curvature},
                        {"lane_count", seg.lane_count},
                        {"lane_width", seg.lane_width},
                        {"speed_limit", seg.speed_limit},
                        {"secured", seg.secured},
                        {"has_emergency_lane", seg.has_emergency_lane},
                        {"marking_quality", seg.marking_quality},
                        {"instrumented", seg.instrumented}});
  }
  j["road"] = {{"closed", sc.map.closed()}, {"segments", segments}};
  if (sc.ego) {
    const auto& e = *sc.ego;
    j["ego"] = {{"s", e.s},
                {"lane", e.lane},
                {"v", e.v},
                {"mode", std::string(to_string(e.mode))},
                {"persona", std::string(to_string(e.persona))},
                {"desired_speed", e.desired_speed}};
  }
  if (sc.traffic) {
    const auto& t = *sc.traffic;
    j["traffic"] = {{"density", t.density},
                    {"count", t.count},
                    {"penetration", t.penetration},
                    {"speed_factor_min", t.speed_factor_min},
                    {"speed_factor_max", t.speed_factor_max},
                    {"region_start", t.region_start},
                    {"region_end", t.region_end},
                    {"length", t.length}};
  }
  ordered_json events = ordered_json::array();
  for (const auto& e : sc.events) {
    ordered_json ev;
    ev["t"] = e.t;
    ev["type"] = std::string(to_string(e.type));
    switch (e.type) {
      case EventType::ObstacleSpawn:
        if (e.s) ev["s"] = *e.s;
        if (e.ahead) ev["ahead"] = *e.ahead;
        ev["lane"] = e.lane;
        break;
      case EventType::SecuredEndOverride:
        if (e.segment) ev["segment"] = *e.segment;
        ev["notice"] = e.notice;
        break;
      case EventType::SensorFault:
        ev["subsystem"] = e.subsystem;
        break;
      case EventType::DriverInput:
        ev["steer_torque"] = e.input.steer_torque;
        ev["throttle"] = e.input.throttle;
        ev["brake"] = e.input.brake;
        if (e.input.engage_request) ev["engage"] = std::string(to_string(*e.input.engage_request));
        ev["disengage"] = e.input.disengage_request;
        ev["acknowledge"] = e.input.acknowledge;
        ev["reset_emergency"] = e.input.reset_emergency;
        ev["duration"] = e.duration;
        break;
    }
    events.push_back(std::move(ev));
  }
  j["events"] = std::move(events);
  if (sc.gantry_s) j["gantry_s"] = *sc.gantry_s;
  ordered_json config = ordered_json::object();
  for (const auto& [key, value] : sc.overrides) config[key] = value;
  j["config"] = std::move(config);
  return j;
}

std::string serialize(const Scenario& scenario) { return to_json(scenario).dump(2) + "\n"; }

}  // namespace abv
