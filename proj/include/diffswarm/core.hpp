#pragma once

// Planar geometry and differential-drive kinematics shared by the plant,
// the estimator and the controller. Units: mm, rad, s.

#include <array>
#include <numbers>

namespace diffswarm {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Below this |w*dt| the arc solution switches to its straight-line limit.
inline constexpr double kArcEpsilon = 1e-9;

/// Wraps an angle into (-pi, pi]. Throws std::domain_error on NaN/inf.
double wrap_angle(double a);

/// Planar pose. The constructor wraps theta, so every Posture built through
/// it has theta in (-pi, pi].
struct Posture {
  double x = 0.0;      // mm
  double y = 0.0;      // mm
  double theta = 0.0;  // rad, counter-clockwise

  Posture() = default;
  Posture(double x_mm, double y_mm, double theta_rad);

  friend bool operator==(const Posture&, const Posture&) = default;
};

/// Body-frame velocities of the unicycle.
struct Twist {
  double v = 0.0;  // mm/s
  double w = 0.0;  // rad/s

  friend bool operator==(const Twist&, const Twist&) = default;
};

/// Linear speeds of the two wheels. `right` is v1 and `left` is v2 in the
/// kinematic model.
struct WheelSpeeds {
  double right = 0.0;  // mm/s
  double left = 0.0;   // mm/s

  friend bool operator==(const WheelSpeeds&, const WheelSpeeds&) = default;
};

inline constexpr double kDefaultMaxWheelSpeed = 180.0;  // mm/s

struct RobotGeometry {
  double wheel_base = 100.0;              // l, mm
  double flow_sensor_separation = 60.0;   // d, mm
  double mm_per_tick = 0.5;
  double max_wheel_speed = kDefaultMaxWheelSpeed;
  // Body-frame bearings of the five IR rangers: the sides of a regular
  // pentagon with one ray facing forward.
  std::array<double, 5> ir_ray_angles{0.0, 2.0 * kPi / 5.0, 4.0 * kPi / 5.0,
                                      -4.0 * kPi / 5.0, -2.0 * kPi / 5.0};
  double ir_range_min = 200.0;  // mm
  double ir_range_max = 1500.0; // mm
  double body_radius = 60.0;    // mm

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Clamps each wheel to +-max_speed independently.
WheelSpeeds clamp_wheels(WheelSpeeds u, double max_speed);

/// v = (v1 + v2) / 2, w = (v1 - v2) / l.
Twist wheels_to_twist(WheelSpeeds u, const RobotGeometry& geom);

/// Inverse of wheels_to_twist.
WheelSpeeds twist_to_wheels(Twist t, const RobotGeometry& geom);

/// Exact constant-twist motion over dt seconds (circular arc, or straight
/// line when |w*dt| <= kArcEpsilon). Throws std::domain_error for dt < 0.
Posture integrate_unicycle(const Posture& p, const Twist& t, double dt);

/// Reference minus current posture expressed in the current body frame.
Posture error_posture(const Posture& reference, const Posture& current);

/// Applies the rigid transform (dx, dy, dtheta) to p: rotate about the
/// origin by dtheta then translate.
Posture transform(const Posture& p, double dx, double dy, double dtheta);

}  // namespace diffswarm
