#include "diffswarm/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "diffswarm/random.hpp"

namespace diffswarm::scenario {
namespace {

int line_of(const YAML::Node& node) {
  const YAML::Mark m = node.Mark();
  return m.is_null() ? 0 : m.line + 1;
}

// Reads a YAML map, remembering which keys were consumed so the rest can be
// reported as unknown.
class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.IsMap()) throw ScenarioError(path_ + ": expected a mapping", line_of(node_));
  }

  YAML::Node child(const std::string& key) {
    used_.insert(key);
    return node_[key];
  }

  bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }

  template <class T>
  void get(const std::string& key, T& out) {
    const YAML::Node n = child(key);
    if (!n) return;
    out = convert<T>(n, path_ + "." + key);
  }

  template <class T>
  T require(const std::string& key) {
    const YAML::Node n = child(key);
    if (!n) throw ScenarioError(path_ + ": missing required key '" + key + "'", line_of(node_));
    return convert<T>(n, path_ + "." + key);
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!used_.count(key)) {
        throw ScenarioError("unknown key '" + key + "' in " + path_, line_of(kv.first));
      }
    }
  }

  template <class T>
  static T convert(const YAML::Node& n, const std::string& where) {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw ScenarioError(where + ": invalid value", line_of(n));
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

template <class Fn>
void for_each_item(const YAML::Node& seq, const std::string& path, Fn fn) {
  if (!seq) return;
  if (!seq.IsSequence()) throw ScenarioError(path + ": expected a list", line_of(seq));
  for (std::size_t i = 0; i < seq.size(); ++i) fn(seq[i], path + "[" + std::to_string(i) + "]", i);
}

std::vector<double> number_list(const YAML::Node& n, const std::string& path,
                                std::size_t expected) {
  std::vector<double> out;
  for_each_item(n, path, [&](const YAML::Node& item, const std::string& p, std::size_t) {
    out.push_back(MapReader::convert<double>(item, p));
  });
  if (expected != 0 && out.size() != expected) {
    throw ScenarioError(path + ": expected " + std::to_string(expected) + " numbers",
                        line_of(n));
  }
  return out;
}

Posture read_posture(const YAML::Node& n, const std::string& path) {
  MapReader r(n, path);
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  r.get("x", x);
  r.get("y", y);
  r.get("theta", theta);
  r.finish();
  return {x, y, theta};
}

sim::Rect read_rect(const YAML::Node& n, const std::string& path) {
  MapReader r(n, path);
  sim::Rect rect;
  rect.min_x = r.require<double>("min_x");
  rect.min_y = r.require<double>("min_y");
  rect.max_x = r.require<double>("max_x");
  rect.max_y = r.require<double>("max_y");
  r.finish();
  return rect;
}

sim::TimeUs period_from_hz(double hz, const std::string& path, int line) {
  if (!(hz > 0.0)) throw ScenarioError(path + ": rate must be > 0", line);
  const double us = 1e6 / hz;
  const auto rounded = std::llround(us);
  if (std::abs(us - static_cast<double>(rounded)) > 1e-6) {
    throw ScenarioError(path + ": rate must give a whole number of microseconds", line);
  }
  return rounded;
}

struct ScheduleExtras {
  std::int64_t send_min_ms = 70;
  std::int64_t send_max_ms = 70;
};

ScheduleExtras read_schedule(const YAML::Node& n, sim::SampleSchedule& s) {
  ScheduleExtras extras;
  if (!n) return extras;
  MapReader r(n, "schedule");
  r.get("plant_step_us", s.plant_step);
  for (const auto& [key, field] :
       {std::pair{"encoder_hz", &s.encoder_period}, std::pair{"flow_hz", &s.flow_period},
        std::pair{"ir_hz", &s.ir_period}}) {
    const YAML::Node c = r.child(key);
    if (c) *field = period_from_hz(MapReader::convert<double>(c, key), key, line_of(c));
  }
  std::int64_t packet_ms = s.packet_period / 1000;
  r.get("packet_period_ms", packet_ms);
  s.packet_period = sim::us_from_ms(packet_ms);
  extras.send_min_ms = packet_ms;
  extras.send_max_ms = packet_ms;
  r.get("send_interval_min_ms", extras.send_min_ms);
  r.get("send_interval_max_ms", extras.send_max_ms);
  r.finish();
  return extras;
}

sim::World read_world(const YAML::Node& n) {
  sim::World w;
  if (!n) return w;
  MapReader r(n, "world");
  if (const YAML::Node b = r.child("bounds")) w.bounds = read_rect(b, "world.bounds");
  for_each_item(r.child("boxes"), "world.boxes",
                [&](const YAML::Node& item, const std::string& p, std::size_t) {
                  w.boxes.push_back(read_rect(item, p));
                });
  for_each_item(r.child("walls"), "world.walls",
                [&](const YAML::Node& item, const std::string& p, std::size_t) {
                  MapReader wr(item, p);
                  sim::Segment s;
                  s.x0 = wr.require<double>("x0");
                  s.y0 = wr.require<double>("y0");
                  s.x1 = wr.require<double>("x1");
                  s.y1 = wr.require<double>("y1");
                  wr.finish();
                  w.walls.push_back(s);
                });
  r.finish();
  return w;
}

comms::ChannelModel read_channel(const YAML::Node& n) {
  comms::ChannelModel c;
  if (!n) return c;
  MapReader r(n, "channel");
  r.get("latency_min_ms", c.latency_min_ms);
  r.get("latency_max_ms", c.latency_max_ms);
  r.get("loss_prob", c.loss_prob);
  r.get("bit_flip_prob", c.bit_flip_prob);
  r.finish();
  return c;
}

sim::RobotSetup read_robot(const YAML::Node& n, const std::string& path, std::size_t index) {
  MapReader r(n, path);
  sim::RobotSetup s;
  int id = static_cast<int>(index) + 1;
  r.get("id", id);
  if (id < 0 || id > 255) throw ScenarioError(path + ".id: must be in [0, 255]", line_of(n));
  s.id = static_cast<std::uint8_t>(id);
  if (const YAML::Node c = r.child("initial")) s.initial = read_posture(c, path + ".initial");
  if (const YAML::Node c = r.child("geometry")) {
    MapReader g(c, path + ".geometry");
    g.get("wheel_base", s.geometry.wheel_base);
    g.get("flow_sensor_separation", s.geometry.flow_sensor_separation);
    g.get("mm_per_tick", s.geometry.mm_per_tick);
    g.get("max_wheel_speed", s.geometry.max_wheel_speed);
    g.get("ir_range_min", s.geometry.ir_range_min);
    g.get("ir_range_max", s.geometry.ir_range_max);
    g.get("body_radius", s.geometry.body_radius);
    if (const YAML::Node a = g.child("ir_ray_angles")) {
      const auto angles = number_list(a, g.path() + ".ir_ray_angles", 5);
      std::copy(angles.begin(), angles.end(), s.geometry.ir_ray_angles.begin());
    }
    g.finish();
  }
  if (const YAML::Node c = r.child("noise")) {
    MapReader nr(c, path + ".noise");
    nr.get("encoder_sigma", s.noise.encoder_sigma);
    nr.get("flow_sigma", s.noise.flow_sigma);
    nr.get("flow_scale", s.noise.flow_scale);
    nr.get("gyro_sigma", s.noise.gyro_sigma);
    nr.get("ir_sigma", s.noise.ir_sigma);
    nr.finish();
  }
  if (const YAML::Node c = r.child("wheels")) {
    MapReader wr(c, path + ".wheels");
    wr.get("ideal", s.wheels.ideal);
    wr.get("kp", s.wheels.gains.kp);
    wr.get("ki", s.wheels.gains.ki);
    wr.get("motor_time_constant", s.wheels.motor_time_constant);
    wr.finish();
  }
  std::vector<sim::SlipInterval> slips;
  for_each_item(r.child("slip"), path + ".slip",
                [&](const YAML::Node& item, const std::string& p, std::size_t) {
                  MapReader sr(item, p);
                  sim::SlipInterval si;
                  si.start_ms = sr.require<std::int64_t>("start_ms");
                  si.end_ms = sr.require<std::int64_t>("end_ms");
                  std::string mode = "stuck";
                  sr.get("mode", mode);
                  if (mode == "stuck") {
                    si.mode = sim::SlipMode::kStuck;
                  } else if (mode == "scale") {
                    si.mode = sim::SlipMode::kScale;
                  } else {
                    throw ScenarioError(p + ".mode: expected stuck or scale", line_of(item));
                  }
                  sr.get("factor", si.factor);
                  sr.finish();
                  slips.push_back(si);
                });
  try {
    s.slip = sim::SlipSchedule(std::move(slips));
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(path + ".slip: " + e.what(), line_of(n));
  }
  r.get("sender_clock_reliable", s.sender_clock_reliable);
  r.finish();
  return s;
}

ReferenceSpec read_reference(const YAML::Node& n) {
  ReferenceSpec ref;
  if (!n) return ref;
  MapReader r(n, "reference");
  std::string type = "circle";
  r.get("type", type);
  if (type == "circle") {
    ref.type = ReferenceType::kCircle;
  } else if (type == "figure_eight") {
    ref.type = ReferenceType::kFigureEight;
  } else if (type == "line") {
    ref.type = ReferenceType::kLine;
  } else if (type == "stationary") {
    ref.type = ReferenceType::kStationary;
  } else {
    throw ScenarioError("reference.type: unknown type '" + type + "'", line_of(n));
  }
  r.get("center_x", ref.center_x);
  r.get("center_y", ref.center_y);
  r.get("radius", ref.radius);
  r.get("speed", ref.speed);
  r.get("start_phase", ref.start_phase);
  r.get("amplitude_x", ref.amplitude_x);
  r.get("amplitude_y", ref.amplitude_y);
  r.get("period", ref.period);
  if (const YAML::Node c = r.child("start")) ref.start = read_posture(c, "reference.start");
  r.finish();
  return ref;
}

ControlSpec read_control(const YAML::Node& n) {
  ControlSpec c;
  if (!n) return c;
  MapReader r(n, "control");
  r.get("k_x", c.gains.k_x);
  r.get("k_y", c.gains.k_y);
  r.get("k_theta", c.gains.k_theta);
  std::string feedback = "truth";
  r.get("feedback", feedback);
  if (feedback == "truth") {
    c.feedback = Feedback::kTruth;
  } else if (feedback == "estimate") {
    c.feedback = Feedback::kEstimate;
  } else {
    throw ScenarioError("control.feedback: expected truth or estimate", line_of(n));
  }
  r.get("period_ms", c.period_ms);
  r.finish();
  return c;
}

estimation::Mat5 diagonal(const std::vector<double>& d) {
  estimation::Mat5 m = estimation::Mat5::Zero();
  for (int i = 0; i < 5; ++i) m(i, i) = d[static_cast<std::size_t>(i)];
  return m;
}

EkfSpec read_ekf(const YAML::Node& n) {
  EkfSpec e;
  if (!n) return e;
  MapReader r(n, "ekf");
  if (const YAML::Node c = r.child("process_noise")) {
    e.config.process_noise = diagonal(number_list(c, "ekf.process_noise", 5));
  }
  if (const YAML::Node c = r.child("measurement_noise")) {
    e.config.measurement_noise = diagonal(number_list(c, "ekf.measurement_noise", 5));
  }
  r.get("slip_threshold", e.config.slip_threshold);
  r.get("slip_inflation", e.config.slip_inflation);
  r.get("slip_window", e.config.slip_window);
  if (const YAML::Node c = r.child("initial_cov")) {
    const auto d = number_list(c, "ekf.initial_cov", 5);
    for (int i = 0; i < 5; ++i) e.initial_cov_diag(i) = d[static_cast<std::size_t>(i)];
  }
  r.finish();
  return e;
}

ConsensusSpec read_consensus(const YAML::Node& n) {
  ConsensusSpec c;
  if (!n) return c;
  MapReader r(n, "consensus");
  auto& cfg = c.config;
  r.get("gain", cfg.gain);
  r.get("epsilon", cfg.epsilon);
  r.get("max_rounds", cfg.max_rounds);
  std::string mode = "networked";
  r.get("mode", mode);
  if (mode == "networked") {
    cfg.mode = swarm::ConsensusMode::kNetworked;
  } else if (mode == "synchronous") {
    cfg.mode = swarm::ConsensusMode::kSynchronous;
  } else {
    throw ScenarioError("consensus.mode: expected networked or synchronous", line_of(n));
  }
  r.get("stable_rounds", cfg.stable_rounds);
  r.get("round_period_ms", cfg.round_period_ms);
  r.get("staleness_horizon_ms", cfg.staleness_horizon_ms);
  r.get("turn_control_period_ms", cfg.turn_control_period_ms);
  r.get("turn_time_constant", cfg.turn_time_constant);
  r.get("max_turn_rate", cfg.max_turn_rate);
  if (const YAML::Node h = r.child("initial_headings")) {
    c.initial_headings = number_list(h, "consensus.initial_headings", 0);
  }
  r.get("random_spread", c.random_spread);
  r.get("max_duration_s", c.max_duration_s);
  r.finish();
  return c;
}

PlanningSpec read_planning(const YAML::Node& n) {
  PlanningSpec p;
  if (!n) return p;
  MapReader r(n, "planning");
  r.get("resolution", p.resolution);
  r.get("occupied_threshold", p.occupied_threshold);
  r.get("median_window", p.median_window);
  r.get("margin", p.margin);
  if (const YAML::Node c = r.child("start")) {
    const auto xy = number_list(c, "planning.start", 2);
    p.start_x = xy[0];
    p.start_y = xy[1];
  }
  if (const YAML::Node c = r.child("goal")) {
    const auto xy = number_list(c, "planning.goal", 2);
    p.goal_x = xy[0];
    p.goal_y = xy[1];
  }
  std::string pose = "truth";
  r.get("map_pose", pose);
  if (pose == "truth") {
    p.map_pose = MapPose::kTruth;
  } else if (pose == "estimate") {
    p.map_pose = MapPose::kEstimate;
  } else {
    throw ScenarioError("planning.map_pose: expected truth or estimate", line_of(n));
  }
  r.finish();
  return p;
}

OutputsSpec read_outputs(const YAML::Node& n) {
  OutputsSpec o;
  if (!n) return o;
  MapReader r(n, "outputs");
  r.get("trajectory", o.trajectory);
  r.get("errors", o.errors);
  r.get("estimates", o.estimates);
  r.get("consensus", o.consensus);
  r.get("path", o.path);
  r.get("map", o.map);
  r.finish();
  return o;
}

bool is_index(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
}

void apply_override(YAML::Node& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ScenarioError("override '" + spec + "': expected key.path=value");
  }
  const std::string path = spec.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(spec.substr(eq + 1));
  } catch (const YAML::Exception&) {
    throw ScenarioError("override '" + spec + "': value is not valid YAML");
  }

  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ScenarioError("override '" + spec + "': empty path component");
    parts.push_back(part);
  }

  YAML::Node cur;
  cur.reset(root);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& key = parts[i];
    const bool last = i + 1 == parts.size();
    YAML::Node next;
    if (cur.IsSequence()) {
      if (!is_index(key) || std::stoul(key) >= cur.size()) {
        throw ScenarioError("override '" + spec + "': bad list index '" + key + "'");
      }
      next.reset(cur[std::stoul(key)]);
    } else {
      if (!cur.IsMap() && !cur.IsNull()) {
        throw ScenarioError("override '" + spec + "': '" + key + "' is not inside a mapping");
      }
      if (!last && (!cur[key] || cur[key].IsNull())) cur[key] = YAML::Node(YAML::NodeType::Map);
      next.reset(cur[key]);
    }
    if (last) {
      next = value;
    } else {
      cur.reset(next);
    }
  }
}

std::uint64_t compute_digest(const std::string& canonical, std::uint64_t seed) {
  const std::string text = canonical + "\nseed=" + std::to_string(seed);
  return comms::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

ScenarioError::ScenarioError(const std::string& message, int line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line) {}

control::ReferenceTrajectory ReferenceSpec::build(double duration_s) const {
  switch (type) {
    case ReferenceType::kCircle:
      return control::ReferenceTrajectory::circle(center_x, center_y, radius, speed, start_phase,
                                                  duration_s);
    case ReferenceType::kFigureEight:
      return control::ReferenceTrajectory::figure_eight(center_x, center_y, amplitude_x,
                                                        amplitude_y, period, duration_s);
    case ReferenceType::kLine:
      return control::ReferenceTrajectory::line(start, speed, duration_s);
    case ReferenceType::kStationary:
      return control::ReferenceTrajectory::stationary(start, duration_s);
  }
  throw ScenarioError("reference: unknown type");
}

void Scenario::validate() const {
  auto check = [](auto&& fn, const std::string& where) {
    try {
      fn();
    } catch (const ScenarioError&) {
      throw;
    } catch (const std::exception& e) {
      throw ScenarioError(where + ": " + e.what());
    }
  };
  if (!(duration_s > 0.0)) throw ScenarioError("duration_s must be > 0");
  if (robots.empty()) throw ScenarioError("robots: at least one robot is required");
  check([&] { schedule.validate(); }, "schedule");
  check([&] { world.validate(); }, "world");
  check([&] { channel.validate(); }, "channel");
  check([&] { control.gains.validate(); }, "control");
  check([&] { ekf.config.validate(); }, "ekf");
  check([&] { consensus.config.validate(); }, "consensus");
  if (control.period_ms <= 0 || sim::us_from_ms(control.period_ms) % schedule.plant_step != 0) {
    throw ScenarioError("control.period_ms must be a positive multiple of the plant step");
  }
  if ((ekf.initial_cov_diag.array() <= 0.0).any()) {
    throw ScenarioError("ekf.initial_cov: entries must be > 0");
  }
  std::set<int> ids;
  for (std::size_t i = 0; i < robots.size(); ++i) {
    check([&] { robots[i].validate(); }, "robots[" + std::to_string(i) + "]");
    if (!ids.insert(robots[i].id).second) {
      throw ScenarioError("robots: duplicate id " + std::to_string(robots[i].id));
    }
  }
  if (!consensus.initial_headings.empty() && consensus.initial_headings.size() != robots.size()) {
    throw ScenarioError("consensus.initial_headings: need one heading per robot");
  }
  if (consensus.random_spread < 0.0 || !(consensus.max_duration_s > 0.0)) {
    throw ScenarioError("consensus: random_spread must be >= 0 and max_duration_s > 0");
  }
  if (!(planning.resolution > 0.0) || planning.occupied_threshold < 1 ||
      planning.median_window < 3 || planning.median_window % 2 == 0 || planning.margin < 0.0) {
    throw ScenarioError(
        "planning: need resolution > 0, occupied_threshold >= 1, odd median_window >= 3, "
        "margin >= 0");
  }
  if (variants.empty()) throw ScenarioError("variants: at least one variant is required");
  check([&] { (void)reference.build(duration_s); }, "reference");
}

Scenario parse_scenario(const std::string& yaml_text, const std::vector<std::string>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ScenarioError("YAML syntax error: " + e.msg, e.mark.line + 1);
  }
  if (!root.IsMap()) throw ScenarioError("scenario must be a mapping");
  for (const auto& o : overrides) apply_override(root, o);

  Scenario s;
  MapReader r(root, "scenario");
  r.get("name", s.name);
  r.get("seed", s.seed);
  r.get("duration_s", s.duration_s);
  const ScheduleExtras extras = read_schedule(r.child("schedule"), s.schedule);
  s.world = read_world(r.child("world"));
  s.channel = read_channel(r.child("channel"));
  const YAML::Node robots = r.child("robots");
  if (!robots) throw ScenarioError("missing required key 'robots'");
  for_each_item(robots, "robots", [&](const YAML::Node& item, const std::string& p, std::size_t i) {
    auto robot = read_robot(item, p, i);
    robot.send_interval_min_ms = extras.send_min_ms;
    robot.send_interval_max_ms = extras.send_max_ms;
    s.robots.push_back(std::move(robot));
  });
  s.reference = read_reference(r.child("reference"));
  s.control = read_control(r.child("control"));
  s.ekf = read_ekf(r.child("ekf"));
  s.consensus = read_consensus(r.child("consensus"));
  s.planning = read_planning(r.child("planning"));
  s.outputs = read_outputs(r.child("outputs"));
  if (const YAML::Node v = r.child("variants")) {
    s.variants.clear();
    for_each_item(v, "variants", [&](const YAML::Node& item, const std::string& p, std::size_t) {
      const auto name = MapReader::convert<std::string>(item, p);
      const auto parsed = estimation::parse_variant(name);
      if (!parsed) throw ScenarioError(p + ": unknown variant '" + name + "'", line_of(item));
      s.variants.push_back(*parsed);
    });
  }
  r.finish();

  YAML::Emitter out;
  out << root;
  s.canonical = out.c_str();
  s.digest = compute_digest(s.canonical, s.seed);
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), overrides);
}

void set_seed(Scenario& s, std::uint64_t seed) {
  s.seed = seed;
  s.digest = compute_digest(s.canonical, seed);
}

}  // namespace diffswarm::scenario
