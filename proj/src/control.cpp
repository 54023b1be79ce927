#include "diffswarm/control.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace diffswarm::control {
namespace {

std::size_t sample_count(double duration, double sample_dt) {
  if (!(duration > 0.0) || !(sample_dt > 0.0)) {
    throw std::invalid_argument("reference: duration and sample_dt must be > 0");
  }
  return static_cast<std::size_t>(std::ceil(duration / sample_dt - 1e-9)) + 1;
}

struct Rate {
  double v = 0.0;
  double w = 0.0;
};

Rate rate_at(const std::vector<ReferenceSample>& s, std::size_t k) {
  const std::size_t lo = k == 0 ? 0 : k - 1;
  const std::size_t hi = std::min(k + 1, s.size() - 1);
  const double dt = s[hi].t - s[lo].t;
  const double dx = s[hi].pose.x - s[lo].pose.x;
  const double dy = s[hi].pose.y - s[lo].pose.y;
  const double heading = s[k].pose.theta;
  const double along = dx * std::cos(heading) + dy * std::sin(heading);
  const double speed = std::hypot(dx, dy) / dt;
  return {along < 0.0 ? -speed : speed, wrap_angle(s[hi].pose.theta - s[lo].pose.theta) / dt};
}

}  // namespace

void Gains::validate() const {
  if (!(k_x > 0.0 && k_y > 0.0 && k_theta > 0.0)) {
    throw std::invalid_argument("tracking gains must all be > 0");
  }
}

ReferenceTrajectory::ReferenceTrajectory(std::vector<ReferenceSample> samples)
    : samples_(std::move(samples)) {
  if (samples_.size() < 2) {
    throw std::invalid_argument("reference trajectory needs at least two samples");
  }
  for (std::size_t i = 1; i < samples_.size(); ++i) {
    if (!(samples_[i].t > samples_[i - 1].t)) {
      throw std::invalid_argument("reference trajectory times must strictly increase");
    }
    if (std::abs(wrap_angle(samples_[i].pose.theta - samples_[i - 1].pose.theta)) >= kPi / 2.0) {
      throw std::invalid_argument("reference trajectory heading step >= pi/2; sample denser");
    }
  }
}

ReferenceTrajectory ReferenceTrajectory::circle(double center_x, double center_y, double radius,
                                                double speed, double start_phase,
                                                double duration, double sample_dt) {
  if (!(radius > 0.0)) throw std::invalid_argument("circle radius must be > 0");
  const std::size_t n = sample_count(duration, sample_dt);
  const double omega = speed / radius;
  std::vector<ReferenceSample> s;
  s.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * sample_dt;
    const double phase = start_phase + omega * t;
    const double heading = phase + (speed >= 0.0 ? kPi / 2.0 : -kPi / 2.0);
    s.push_back({t, Posture(center_x + radius * std::cos(phase),
                            center_y + radius * std::sin(phase), heading)});
  }
  return ReferenceTrajectory(std::move(s));
}

ReferenceTrajectory ReferenceTrajectory::figure_eight(double center_x, double center_y,
                                                      double amplitude_x, double amplitude_y,
                                                      double period, double duration,
                                                      double sample_dt) {
  if (!(period > 0.0)) throw std::invalid_argument("figure-eight period must be > 0");
  const std::size_t n = sample_count(duration, sample_dt);
  const double rate = kTwoPi / period;
  std::vector<ReferenceSample> s;
  s.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * sample_dt;
    const double vx = amplitude_x * rate * std::cos(rate * t);
    const double vy = 2.0 * amplitude_y * rate * std::cos(2.0 * rate * t);
    s.push_back({t, Posture(center_x + amplitude_x * std::sin(rate * t),
                            center_y + amplitude_y * std::sin(2.0 * rate * t),
                            std::atan2(vy, vx))});
  }
  return ReferenceTrajectory(std::move(s));
}

ReferenceTrajectory ReferenceTrajectory::line(const Posture& start, double speed,
                                              double duration, double sample_dt) {
  const std::size_t n = sample_count(duration, sample_dt);
  std::vector<ReferenceSample> s;
  s.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * sample_dt;
    s.push_back({t, Posture(start.x + speed * t * std::cos(start.theta),
                            start.y + speed * t * std::sin(start.theta), start.theta)});
  }
  return ReferenceTrajectory(std::move(s));
}

ReferenceTrajectory ReferenceTrajectory::stationary(const Posture& pose, double duration,
                                                    double sample_dt) {
  return line(pose, 0.0, duration, sample_dt);
}

ReferenceState reference_at(const ReferenceTrajectory& traj, double t) {
  const auto& s = traj.samples();
  if (!(t >= traj.start_time() && t <= traj.end_time())) {
    throw std::domain_error("reference_at: t outside the trajectory span");
  }
  auto it = std::upper_bound(s.begin(), s.end(), t,
                             [](double value, const ReferenceSample& r) { return value < r.t; });
  std::size_t hi = static_cast<std::size_t>(it - s.begin());
  if (hi >= s.size()) hi = s.size() - 1;
  const std::size_t lo = hi - 1;
  const double alpha = (t - s[lo].t) / (s[hi].t - s[lo].t);

  ReferenceState out;
  const auto& a = s[lo].pose;
  const auto& b = s[hi].pose;
  out.pose = Posture(a.x + alpha * (b.x - a.x), a.y + alpha * (b.y - a.y),
                     a.theta + alpha * wrap_angle(b.theta - a.theta));
  const Rate ra = rate_at(s, lo);
  const Rate rb = rate_at(s, hi);
  out.v = (1.0 - alpha) * ra.v + alpha * rb.v;
  out.w = (1.0 - alpha) * ra.w + alpha * rb.w;
  return out;
}

WheelSpeeds saturate_preserving_ratio(WheelSpeeds u, double max_speed) {
  const double peak = std::max(std::abs(u.right), std::abs(u.left));
  if (peak <= max_speed) return u;
  const double scale = max_speed / peak;
  return {u.right * scale, u.left * scale};
}

WheelSpeeds tracking_control_unsaturated(const Posture& reference, const Posture& current,
                                         double v_r, double w_r, const Gains& gains,
                                         const RobotGeometry& geom) {
  const Posture e = error_posture(reference, current);
  const double forward = v_r * std::cos(e.theta) + gains.k_x * e.x;
  const double turn = (geom.wheel_base / 2.0) *
                      (w_r + v_r * (gains.k_y * e.y + gains.k_theta * std::sin(e.theta)));
  return {forward + turn, forward - turn};
}

WheelSpeeds tracking_control(const Posture& reference, const Posture& current, double v_r,
                             double w_r, const Gains& gains, const RobotGeometry& geom) {
  return saturate_preserving_ratio(
      tracking_control_unsaturated(reference, current, v_r, w_r, gains, geom),
      geom.max_wheel_speed);
}

double lyapunov_value(const Posture& error, double heading_weight) {
  return 0.5 * (error.x * error.x + error.y * error.y) +
         heading_weight * (1.0 - std::cos(error.theta));
}

}  // namespace diffswarm::control
