#include "diffswarm/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffswarm {

double wrap_angle(double a) {
  if (!std::isfinite(a)) {
    throw std::domain_error("wrap_angle: non-finite angle");
  }
  double r = std::remainder(a, kTwoPi);  // [-pi, pi]
  if (r <= -kPi) {
    r += kTwoPi;
  }
  return r;
}

Posture::Posture(double x_mm, double y_mm, double theta_rad)
    : x(x_mm), y(y_mm), theta(wrap_angle(theta_rad)) {}

void RobotGeometry::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("robot geometry: " + what);
  };
  if (!(wheel_base > 0.0)) fail("wheel_base must be > 0");
  if (!(flow_sensor_separation > 0.0)) fail("flow_sensor_separation must be > 0");
  if (!(mm_per_tick > 0.0)) fail("mm_per_tick must be > 0");
  if (!(max_wheel_speed > 0.0)) fail("max_wheel_speed must be > 0");
  if (!(ir_range_min >= 0.0 && ir_range_min < ir_range_max)) {
    fail("need 0 <= ir_range_min < ir_range_max");
  }
  if (!(body_radius >= 0.0)) fail("body_radius must be >= 0");
  for (double a : ir_ray_angles) {
    if (!std::isfinite(a)) fail("ir_ray_angles must be finite");
  }
}

WheelSpeeds clamp_wheels(WheelSpeeds u, double max_speed) {
  return {std::clamp(u.right, -max_speed, max_speed),
          std::clamp(u.left, -max_speed, max_speed)};
}

Twist wheels_to_twist(WheelSpeeds u, const RobotGeometry& geom) {
  return {(u.right + u.left) / 2.0, (u.right - u.left) / geom.wheel_base};
}

WheelSpeeds twist_to_wheels(Twist t, const RobotGeometry& geom) {
  const double half = t.w * geom.wheel_base / 2.0;
  return {t.v + half, t.v - half};
}

Posture integrate_unicycle(const Posture& p, const Twist& t, double dt) {
  if (!(dt >= 0.0)) {
    throw std::domain_error("integrate_unicycle: dt must be >= 0");
  }
  const double dtheta = t.w * dt;
  if (std::abs(dtheta) > kArcEpsilon) {
    const double radius = t.v / t.w;
    const double theta_end = p.theta + dtheta;
    return {p.x + radius * (std::sin(theta_end) - std::sin(p.theta)),
            p.y + radius * (-std::cos(theta_end) + std::cos(p.theta)),
            theta_end};
  }
  return {p.x + t.v * dt * std::cos(p.theta), p.y + t.v * dt * std::sin(p.theta),
          p.theta + dtheta};
}

Posture error_posture(const Posture& reference, const Posture& current) {
  const double dx = reference.x - current.x;
  const double dy = reference.y - current.y;
  const double c = std::cos(current.theta);
  const double s = std::sin(current.theta);
  return {c * dx + s * dy, -s * dx + c * dy, reference.theta - current.theta};
}

Posture transform(const Posture& p, double dx, double dy, double dtheta) {
  const double c = std::cos(dtheta);
  const double s = std::sin(dtheta);
  return {c * p.x - s * p.y + dx, s * p.x + c * p.y + dy, p.theta + dtheta};
}

}  // namespace diffswarm
