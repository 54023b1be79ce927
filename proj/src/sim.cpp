#include "diffswarm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace diffswarm::sim {
namespace {

double pi_wheel(double command, double& actual, double& integrator, const WheelDynamics& dyn,
                double max_speed, double dt) {
  const double cmd = std::clamp(command, -max_speed, max_speed);
  const double error = cmd - actual;
  const double raw_drive = cmd + dyn.gains.kp * error + integrator;
  const double drive = std::clamp(raw_drive, -max_speed, max_speed);
  const bool saturated = drive != raw_drive;
  const double decay = std::exp(-dt / dyn.motor_time_constant);
  actual = std::clamp(drive + (actual - drive) * decay, -max_speed, max_speed);
  // Anti-windup: hold the integrator while the drive is pinned and the error
  // would push it further into saturation.
  if (!saturated || (error > 0.0) != (raw_drive > 0.0)) {
    integrator += dyn.gains.ki * error * dt;
  }
  return actual;
}

double point_segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((px - s.x0) * dx + (py - s.y0) * dy) / len2, 0.0, 1.0);
  }
  return std::hypot(px - (s.x0 + t * dx), py - (s.y0 + t * dy));
}

void rect_edges(const Rect& r, std::vector<Segment>& out) {
  out.push_back({r.min_x, r.min_y, r.max_x, r.min_y});
  out.push_back({r.max_x, r.min_y, r.max_x, r.max_y});
  out.push_back({r.max_x, r.max_y, r.min_x, r.max_y});
  out.push_back({r.min_x, r.max_y, r.min_x, r.min_y});
}

}  // namespace

PlantState wheel_pi_step(const PlantState& state, const WheelDynamics& dyn, double max_speed,
                         double dt) {
  if (!(dt > 0.0)) {
    throw std::domain_error("wheel_pi_step: dt must be > 0");
  }
  PlantState next = state;
  if (dyn.ideal) {
    next.wheel_actual = clamp_wheels(state.wheel_command, max_speed);
    return next;
  }
  pi_wheel(state.wheel_command.right, next.wheel_actual.right, next.integrator.right, dyn,
           max_speed, dt);
  pi_wheel(state.wheel_command.left, next.wheel_actual.left, next.integrator.left, dyn,
           max_speed, dt);
  return next;
}

SlipSchedule::SlipSchedule(std::vector<SlipInterval> intervals) : intervals_(std::move(intervals)) {
  std::sort(intervals_.begin(), intervals_.end(),
            [](const SlipInterval& a, const SlipInterval& b) { return a.start_ms < b.start_ms; });
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    const auto& iv = intervals_[i];
    if (iv.start_ms >= iv.end_ms) {
      throw std::invalid_argument("slip interval needs start < end");
    }
    if (!(iv.factor >= 0.0 && iv.factor <= 1.0)) {
      throw std::invalid_argument("slip factor must be in [0, 1]");
    }
    if (i > 0 && intervals_[i - 1].end_ms > iv.start_ms) {
      throw std::invalid_argument("slip intervals overlap");
    }
  }
}

const SlipInterval* SlipSchedule::active_at(TimeUs t) const {
  for (const auto& iv : intervals_) {
    if (t >= us_from_ms(iv.start_ms) && t < us_from_ms(iv.end_ms)) {
      return &iv;
    }
  }
  return nullptr;
}

PlantState step_plant(const PlantState& state, const SlipSchedule& slip, const WheelDynamics& dyn,
                      const RobotGeometry& geom, double dt) {
  if (!(dt > 0.0 && dt <= 0.2)) {
    throw std::domain_error("step_plant: dt must be in (0, 0.2]");
  }
  const TimeUs total_us = std::llround(dt * 1e6);
  const int substeps = std::max(1, static_cast<int>(std::ceil(dt / 1e-3 - 1e-9)));
  const double h = dt / substeps;
  const double half_d = geom.flow_sensor_separation / 2.0;

  PlantState s = state;
  for (int i = 0; i < substeps; ++i) {
    const TimeUs t_sub = state.time + (total_us * i) / substeps;
    const SlipInterval* active = slip.active_at(t_sub);
    const WheelSpeeds before = s.wheel_actual;
    s = wheel_pi_step(s, dyn, geom.max_wheel_speed, h);
    const WheelSpeeds mean{(before.right + s.wheel_actual.right) / 2.0,
                           (before.left + s.wheel_actual.left) / 2.0};
    double contact = 1.0;
    if (active != nullptr) {
      contact = active->mode == SlipMode::kStuck ? 0.0 : active->factor;
    }
    const Twist ground = wheels_to_twist({mean.right * contact, mean.left * contact}, geom);
    s.truth = integrate_unicycle(s.truth, ground, h);
    s.wheel_travel.right += mean.right * h;
    s.wheel_travel.left += mean.left * h;
    s.flow_travel.left += (ground.v - ground.w * half_d) * h;
    s.flow_travel.right += (ground.v + ground.w * half_d) * h;
    s.ground = ground;
    s.slip_active = active != nullptr;
  }
  s.time = state.time + total_us;
  return s;
}

void SensorNoise::validate() const {
  if (!(encoder_sigma >= 0.0 && flow_sigma >= 0.0 && gyro_sigma >= 0.0 && ir_sigma >= 0.0)) {
    throw std::invalid_argument("sensor noise: sigmas must be >= 0");
  }
  if (!(flow_scale > 0.0)) {
    throw std::invalid_argument("sensor noise: flow_scale must be > 0");
  }
}

Ticks EncoderSampler::sample(const PlantState& prev, const PlantState& curr,
                             const RobotGeometry& geom, const SensorNoise& noise, Rng& rng) {
  const double dt = seconds(curr.time - prev.time);
  auto quantize = [&](double travel, double& carry) {
    const double total = carry + (travel + rng.gaussian(noise.encoder_sigma) * dt) / geom.mm_per_tick;
    const double ticks = std::floor(total);
    carry = total - ticks;
    return static_cast<std::int64_t>(ticks);
  };
  Ticks out;
  out.left = quantize(curr.wheel_travel.left - prev.wheel_travel.left, carry_left_);
  out.right = quantize(curr.wheel_travel.right - prev.wheel_travel.right, carry_right_);
  return out;
}

FlowReading sample_optical_flow(const PlantState& prev, const PlantState& curr,
                                const SensorNoise& noise, Rng& rng) {
  const double dt = seconds(curr.time - prev.time);
  FlowReading r;
  r.dx_left = (curr.flow_travel.left - prev.flow_travel.left) * noise.flow_scale +
              rng.gaussian(noise.flow_sigma) * dt;
  r.dx_right = (curr.flow_travel.right - prev.flow_travel.right) * noise.flow_scale +
               rng.gaussian(noise.flow_sigma) * dt;
  return r;
}

double sample_gyro_heading(const PlantState& state, const SensorNoise& noise, Rng& rng) {
  return wrap_angle(state.truth.theta + rng.gaussian(noise.gyro_sigma));
}

void World::validate() const {
  if (!(bounds.max_x > bounds.min_x && bounds.max_y > bounds.min_y)) {
    throw std::invalid_argument("world bounds are degenerate");
  }
  for (const auto& b : boxes) {
    if (!(b.max_x > b.min_x && b.max_y > b.min_y)) {
      throw std::invalid_argument("world box is degenerate");
    }
    if (!bounds.contains(b.min_x, b.min_y) || !bounds.contains(b.max_x, b.max_y)) {
      throw std::invalid_argument("world box lies outside bounds");
    }
  }
  for (const auto& w : walls) {
    if (!bounds.contains(w.x0, w.y0) || !bounds.contains(w.x1, w.y1)) {
      throw std::invalid_argument("world wall lies outside bounds");
    }
  }
}

std::vector<Segment> World::edges() const {
  std::vector<Segment> out;
  out.reserve(4 + 4 * boxes.size() + walls.size());
  rect_edges(bounds, out);
  for (const auto& b : boxes) rect_edges(b, out);
  out.insert(out.end(), walls.begin(), walls.end());
  return out;
}

double World::clearance(double x, double y) const {
  for (const auto& b : boxes) {
    if (b.contains(x, y)) return 0.0;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : edges()) {
    best = std::min(best, point_segment_distance(x, y, e));
  }
  return best;
}

std::optional<double> cast_ray(const std::vector<Segment>& edges, double x, double y,
                               double bearing) {
  const double dx = std::cos(bearing);
  const double dy = std::sin(bearing);
  std::optional<double> best;
  for (const auto& e : edges) {
    const double ex = e.x1 - e.x0;
    const double ey = e.y1 - e.y0;
    const double denom = dx * ey - dy * ex;
    if (std::abs(denom) < 1e-12) continue;  // parallel
    const double wx = e.x0 - x;
    const double wy = e.y0 - y;
    const double t = (wx * ey - wy * ex) / denom;  // along the ray
    const double u = (wx * dy - wy * dx) / denom;  // along the edge
    if (t >= 0.0 && u >= 0.0 && u <= 1.0) {
      if (!best || t < *best) best = t;
    }
  }
  return best;
}

IrScan sample_ir(const Posture& pose, const World& world, const RobotGeometry& geom,
                 const SensorNoise& noise, Rng& rng) {
  const auto edges = world.edges();
  IrScan scan;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const auto hit = cast_ray(edges, pose.x, pose.y, pose.theta + geom.ir_ray_angles[i]);
    const double n = rng.gaussian(noise.ir_sigma);
    if (hit && *hit >= geom.ir_range_min && *hit <= geom.ir_range_max) {
      scan[i] = *hit + n;
    }
  }
  return scan;
}

void SampleSchedule::validate() const {
  if (plant_step <= 0) throw std::invalid_argument("schedule: plant step must be > 0");
  for (TimeUs p : {encoder_period, flow_period, ir_period, packet_period}) {
    if (p <= 0 || p % plant_step != 0) {
      throw std::invalid_argument("schedule: sensor periods must be positive multiples of the plant step");
    }
  }
}

}  // namespace diffswarm::sim
