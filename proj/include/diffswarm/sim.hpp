#pragma once

// Ground-truth plant and sensor emulation for a differential-drive robot.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "diffswarm/core.hpp"
#include "diffswarm/random.hpp"

namespace diffswarm::sim {

using TimeUs = std::int64_t;

inline constexpr TimeUs us_from_ms(std::int64_t ms) { return ms * 1000; }
inline constexpr double seconds(TimeUs us) { return static_cast<double>(us) * 1e-6; }

struct PiGains {
  double kp = 0.8;
  double ki = 2.0;
};

/// Wheel loop: per-wheel PI on the speed error plus command feedforward,
/// driving a first-order motor lag. `ideal` bypasses the loop entirely and
/// the wheels follow the clamped command instantly.
struct WheelDynamics {
  PiGains gains;
  double motor_time_constant = 0.05;  // s
  bool ideal = false;
};

struct PlantState {
  Posture truth;
  WheelSpeeds wheel_actual;
  WheelSpeeds wheel_command;
  WheelSpeeds integrator;  // PI integral term, mm/s
  TimeUs time = 0;
  bool slip_active = false;
  // Cumulative odometers, used by the samplers: wheel-surface travel and
  // ground travel under the left/right flow sensors (mm).
  WheelSpeeds wheel_travel;
  WheelSpeeds flow_travel;
  Twist ground;  // ground-contact twist during the last step
};

/// One PI update of both wheels over dt seconds (dt > 0). The command is
/// clamped to +-max_speed, the motor lag is integrated exactly for the held
/// drive, and the integrator stops accumulating while the drive saturates.
PlantState wheel_pi_step(const PlantState& state, const WheelDynamics& dyn,
                         double max_speed, double dt);

enum class SlipMode { kStuck, kScale };

struct SlipInterval {
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  SlipMode mode = SlipMode::kStuck;
  double factor = 0.0;
};

class SlipSchedule {
 public:
  SlipSchedule() = default;
  /// Throws std::invalid_argument on overlapping or malformed intervals.
  explicit SlipSchedule(std::vector<SlipInterval> intervals);

  const std::vector<SlipInterval>& intervals() const { return intervals_; }
  /// The interval covering [start, end) that contains `t`, if any.
  const SlipInterval* active_at(TimeUs t) const;

 private:
  std::vector<SlipInterval> intervals_;
};

/// Advances the plant by dt seconds, dt in (0, 0.2]. Truth moves with the
/// ground-contact wheel speeds: zero while a stuck interval is active,
/// factor * wheel_actual in scale mode. Internally sub-steps at 1 ms so the
/// wheel loop stays accurate for long steps.
PlantState step_plant(const PlantState& state, const SlipSchedule& slip,
                      const WheelDynamics& dyn, const RobotGeometry& geom, double dt);

struct SensorNoise {
  double encoder_sigma = 2.0;  // mm/s per sample
  double flow_sigma = 10.0;    // mm/s per sample
  double flow_scale = 1.0;
  double gyro_sigma = 0.005;   // rad
  double ir_sigma = 1.0;       // mm

  void validate() const;
};

struct Ticks {
  std::int64_t left = 0;
  std::int64_t right = 0;
};

/// Quantizes wheel-surface travel into encoder ticks. Keeps the sub-tick
/// remainder so no displacement is lost between samples. Encoders see the
/// wheel, not the ground, so they keep counting while the robot is stuck.
class EncoderSampler {
 public:
  Ticks sample(const PlantState& prev, const PlantState& curr, const RobotGeometry& geom,
               const SensorNoise& noise, Rng& rng);

 private:
  double carry_left_ = 0.0;
  double carry_right_ = 0.0;
};

struct FlowReading {
  double dx_left = 0.0;   // mm
  double dx_right = 0.0;  // mm
};

/// Longitudinal ground displacement under each flow sensor between two
/// plant states, scaled by flow_scale, with additive noise.
FlowReading sample_optical_flow(const PlantState& prev, const PlantState& curr,
                                const SensorNoise& noise, Rng& rng);

double sample_gyro_heading(const PlantState& state, const SensorNoise& noise, Rng& rng);

struct Rect {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  bool contains(double x, double y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
};

struct Segment {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
};

struct World {
  Rect bounds{-2000.0, -2000.0, 2000.0, 2000.0};
  std::vector<Rect> boxes;
  std::vector<Segment> walls;

  void validate() const;
  /// All obstacle edges, including the four bounds edges.
  std::vector<Segment> edges() const;
  /// Euclidean distance from a point to the nearest obstacle edge or box
  /// interior (0 inside a box).
  double clearance(double x, double y) const;
};

/// Distance along the ray from (x, y) at `bearing` to the nearest edge, or
/// nullopt if nothing is hit.
std::optional<double> cast_ray(const std::vector<Segment>& edges, double x, double y,
                               double bearing);

using IrScan = std::array<std::optional<double>, 5>;

/// One reading per pentagon ray. A ray whose true distance falls outside
/// [ir_range_min, ir_range_max] reports nullopt.
IrScan sample_ir(const Posture& pose, const World& world, const RobotGeometry& geom,
                 const SensorNoise& noise, Rng& rng);

/// Sensor sampling periods. Defaults: encoders 400 Hz, flow 1 kHz, IR 25 Hz,
/// packets every 70 ms, plant integration at 2 kHz.
struct SampleSchedule {
  TimeUs plant_step = 500;
  TimeUs encoder_period = 2500;
  TimeUs flow_period = 1000;
  TimeUs ir_period = 40000;
  TimeUs packet_period = 70000;

  void validate() const;
};

}  // namespace diffswarm::sim
