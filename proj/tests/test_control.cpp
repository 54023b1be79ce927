#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "diffswarm/control.hpp"

using namespace diffswarm;
using namespace diffswarm::control;

namespace {

struct LoopResult {
  double max_increase = 0.0;
  Posture final_error;
};

// Continuous closed loop: the law is evaluated at every RK4 stage, and V is
// sampled once per control period. No wheel lag, no saturation.
LoopResult closed_loop(const ReferenceTrajectory& ref, Posture current, const Gains& gains,
                       double period, double duration) {
  const RobotGeometry geom;
  const double weight = 1.0 / gains.k_y;
  const double h = 0.001;
  auto rate = [&](double t, double x, double y, double th) {
    const ReferenceState r = reference_at(ref, t);
    const WheelSpeeds u =
        tracking_control_unsaturated(r.pose, Posture(x, y, th), r.v, r.w, gains, geom);
    const Twist tw = wheels_to_twist(u, geom);
    return std::array<double, 3>{tw.v * std::cos(th), tw.v * std::sin(th), tw.w};
  };
  LoopResult out;
  double x = current.x, y = current.y, th = current.theta;
  double prev_v = lyapunov_value(error_posture(reference_at(ref, 0.0).pose, current), weight);
  const int per_period = static_cast<int>(std::lround(period / h));
  const int steps = static_cast<int>(std::lround(duration / h));
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    const auto k1 = rate(t, x, y, th);
    const auto k2 = rate(t + h / 2, x + h / 2 * k1[0], y + h / 2 * k1[1], th + h / 2 * k1[2]);
    const auto k3 = rate(t + h / 2, x + h / 2 * k2[0], y + h / 2 * k2[1], th + h / 2 * k2[2]);
    const auto k4 = rate(t + h, x + h * k3[0], y + h * k3[1], th + h * k3[2]);
    x += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
    y += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
    th += h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
    if ((i + 1) % per_period == 0) {
      const double v =
          lyapunov_value(error_posture(reference_at(ref, t + h).pose, Posture(x, y, th)), weight);
      out.max_increase = std::max(out.max_increase, v - prev_v);
      prev_v = v;
    }
  }
  out.final_error = error_posture(reference_at(ref, steps * h).pose, Posture(x, y, th));
  return out;
}

}  // namespace

TEST_CASE("circle feedforward matches geometry") {
  const auto ref = ReferenceTrajectory::circle(0, 0, 1000, 100, -kPi / 2, 40);
  for (double t = 0.0; t <= 40.0; t += 0.137) {
    const ReferenceState r = reference_at(ref, t);
    CHECK(std::abs(r.v - 100) < 0.1);
    CHECK(std::abs(r.w - 0.1) < 1e-4);
    CHECK(std::hypot(r.pose.x, r.pose.y) == doctest::Approx(1000).epsilon(1e-4));
  }
  const ReferenceState start = reference_at(ref, 0.0);
  CHECK(start.pose.x == doctest::Approx(0).scale(1000));
  CHECK(start.pose.y == doctest::Approx(-1000));
  CHECK(start.pose.theta == doctest::Approx(0).scale(1));
  CHECK_THROWS_AS(reference_at(ref, 40.5), std::domain_error);
  CHECK_THROWS_AS(reference_at(ref, -0.1), std::domain_error);
}

TEST_CASE("line and stationary references") {
  const auto line = ReferenceTrajectory::line({0, 0, 0.5}, 80, 10);
  for (double t = 0.0; t <= 10.0; t += 0.5) {
    const ReferenceState r = reference_at(line, t);
    CHECK(r.w == 0.0);
    CHECK(r.v == doctest::Approx(80));
  }
  const auto still = ReferenceTrajectory::stationary({100, 200, 1.0}, 5);
  const ReferenceState s = reference_at(still, 2.5);
  CHECK(s.v == 0.0);
  CHECK(s.w == 0.0);
  CHECK(s.pose == Posture{100, 200, 1.0});
}

TEST_CASE("reference validation") {
  CHECK_THROWS_AS(ReferenceTrajectory({{0, {}}, {0, {}}}), std::invalid_argument);
  CHECK_THROWS_AS(ReferenceTrajectory({{0, {0, 0, 0}}, {1, {0, 0, 2.0}}}), std::invalid_argument);
  // Shortest-arc interpolation across the cut.
  const ReferenceTrajectory r({{0, {0, 0, kPi - 0.1}}, {1, {0, 0, -kPi + 0.1}}});
  CHECK(std::abs(reference_at(r, 0.5).pose.theta) == doctest::Approx(kPi));
}

TEST_CASE("tracking law examples") {
  RobotGeometry g;
  g.wheel_base = 100;
  const Gains k;
  const Posture p(10, 20, 0.3);
  const WheelSpeeds a = tracking_control(p, p, 100, 0, k, g);
  CHECK(a.right == doctest::Approx(100));
  CHECK(a.left == doctest::Approx(100));

  const WheelSpeeds b = tracking_control(p, p, 100, 1, k, g);
  CHECK(b.right == doctest::Approx(150));
  CHECK(b.left == doctest::Approx(50));

  Gains kx;
  kx.k_x = 1.0;
  const WheelSpeeds c = tracking_control({10, 0, 0}, {0, 0, 0}, 0, 0, kx, g);
  CHECK(c.right == doctest::Approx(10));
  CHECK(c.left == doctest::Approx(10));
}

TEST_CASE("lyapunov examples") {
  CHECK(lyapunov_value({0, 0, 0}) == 0.0);
  CHECK(lyapunov_value({0, 0, kPi}) == doctest::Approx(2.0));
  CHECK(lyapunov_value({3, 4, 0}) == doctest::Approx(12.5));
  CHECK(lyapunov_value({0, 0, kPi}, 10.0) == doctest::Approx(20.0));
}

TEST_CASE("saturation keeps the wheel ratio and turn direction") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> d(-600, 600);
  for (int i = 0; i < 10000; ++i) {
    const WheelSpeeds u{d(gen), d(gen)};
    const WheelSpeeds s = saturate_preserving_ratio(u, 180);
    CHECK(std::abs(s.right) <= 180 + 1e-9);
    CHECK(std::abs(s.left) <= 180 + 1e-9);
    CHECK((s.right - s.left > 0) == (u.right - u.left > 0));
    CHECK(s.right * u.left == doctest::Approx(s.left * u.right));
  }
  const WheelSpeeds keep = saturate_preserving_ratio({100, -50}, 180);
  CHECK(keep == WheelSpeeds{100, -50});
}

TEST_CASE("tracking law is invariant under rigid transforms") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> xy(-2000, 2000), th(-kPi, kPi), v(-150, 150), w(-1, 1);
  const RobotGeometry g;
  Gains k;
  k.k_y = 0.005;
  k.k_theta = 1.5;
  for (int i = 0; i < 1000; ++i) {
    const Posture r(xy(gen), xy(gen), th(gen));
    const Posture c(xy(gen), xy(gen), th(gen));
    const double vr = v(gen), wr = w(gen);
    const double dx = xy(gen), dy = xy(gen), dth = th(gen);
    const WheelSpeeds a = tracking_control_unsaturated(r, c, vr, wr, k, g);
    const WheelSpeeds b =
        tracking_control_unsaturated(transform(r, dx, dy, dth), transform(c, dx, dy, dth), vr, wr,
                                     k, g);
    const double scale = 1.0 + std::max(std::abs(a.right), std::abs(a.left));
    CHECK(std::abs(a.right - b.right) < 1e-9 * scale * 1e3);
    CHECK(std::abs(a.left - b.left) < 1e-9 * scale * 1e3);
  }
}

TEST_CASE("closed loop descends and converges from random initial errors") {
  const auto ref = ReferenceTrajectory::circle(0, 0, 1000, 100, -kPi / 2, 25);
  const Gains gains;
  std::mt19937_64 gen(19);
  std::uniform_real_distribution<double> radius(0, 200), bearing(-kPi, kPi),
      heading(-kPi / 2, kPi / 2);
  for (int i = 0; i < 20; ++i) {
    const double rho = radius(gen), b = bearing(gen);
    const Posture start(rho * std::cos(b), -1000 + rho * std::sin(b), heading(gen));
    const LoopResult res = closed_loop(ref, start, gains, 0.07, 20.0);
    CHECK(res.max_increase < 1e-6);
    CHECK(std::abs(res.final_error.x) < 5);
    CHECK(std::abs(res.final_error.y) < 5);
    CHECK(std::abs(res.final_error.theta) < 0.02);
  }
}

TEST_CASE("gain validation") {
  Gains g;
  CHECK_NOTHROW(g.validate());
  g.k_y = 0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}
