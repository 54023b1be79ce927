#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "diffswarm/robot.hpp"
#include "diffswarm/sim.hpp"

using namespace diffswarm;
using namespace diffswarm::sim;

namespace {

WheelDynamics ideal_wheels() {
  WheelDynamics d;
  d.ideal = true;
  return d;
}

PlantState moving(double right, double left) {
  PlantState s;
  s.wheel_command = {right, left};
  s.wheel_actual = {right, left};
  return s;
}

SensorNoise quiet() {
  SensorNoise n;
  n.encoder_sigma = 0;
  n.flow_sigma = 0;
  n.gyro_sigma = 0;
  n.ir_sigma = 0;
  return n;
}

}  // namespace

TEST_CASE("wheel PI at setpoint stays put") {
  PlantState s = moving(100, 100);
  const WheelDynamics dyn;
  for (int i = 0; i < 100; ++i) s = wheel_pi_step(s, dyn, 180, 0.001);
  CHECK(s.wheel_actual.right == doctest::Approx(100));
  CHECK(s.wheel_actual.left == doctest::Approx(100));
  CHECK(s.integrator.right == 0.0);
  CHECK(s.integrator.left == 0.0);
}

TEST_CASE("wheel PI step response reaches the command") {
  PlantState s;
  s.wheel_command = {100, 100};
  const WheelDynamics dyn;
  for (int i = 0; i < 5000; ++i) s = wheel_pi_step(s, dyn, 180, 0.001);
  CHECK(std::abs(s.wheel_actual.right - 100) < 1.0);
  CHECK(std::abs(s.wheel_actual.left - 100) < 1.0);
}

TEST_CASE("wheel PI saturates at max speed") {
  PlantState s;
  s.wheel_command = {300, 300};
  const WheelDynamics dyn;
  for (int i = 0; i < 5000; ++i) {
    s = wheel_pi_step(s, dyn, 180, 0.001);
    CHECK(s.wheel_actual.right <= 180.0);
  }
  CHECK(s.wheel_actual.right == doctest::Approx(180).epsilon(1e-3));
  CHECK(s.wheel_actual.left == doctest::Approx(180).epsilon(1e-3));
  CHECK_THROWS_AS(wheel_pi_step(s, dyn, 180, 0.0), std::domain_error);
}

TEST_CASE("step_plant examples") {
  const RobotGeometry g;
  const PlantState s0 = moving(100, 100);

  const PlantState a = step_plant(s0, {}, ideal_wheels(), g, 0.07);
  CHECK(a.truth.x == doctest::Approx(7.0));
  CHECK(a.truth.y == doctest::Approx(0.0));
  CHECK(a.time == 70000);

  const SlipSchedule stuck({{0, 1000, SlipMode::kStuck, 0.0}});
  const PlantState b = step_plant(s0, stuck, ideal_wheels(), g, 0.07);
  CHECK(b.truth == s0.truth);
  CHECK(b.slip_active);
  CHECK(b.wheel_travel.right == doctest::Approx(7.0));

  const SlipSchedule half({{0, 1000, SlipMode::kScale, 0.5}});
  const PlantState c = step_plant(s0, half, ideal_wheels(), g, 0.1);
  CHECK(c.truth.x == doctest::Approx(5.0));

  CHECK_THROWS_AS(step_plant(s0, {}, ideal_wheels(), g, 0.0), std::domain_error);
  CHECK_THROWS_AS(step_plant(s0, {}, ideal_wheels(), g, 0.25), std::domain_error);
}

TEST_CASE("slip schedule validation") {
  CHECK_THROWS_AS(SlipSchedule({{100, 100, SlipMode::kStuck, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(SlipSchedule({{0, 100, SlipMode::kScale, 1.5}}), std::invalid_argument);
  CHECK_THROWS_AS(SlipSchedule({{0, 100, SlipMode::kStuck, 0}, {50, 150, SlipMode::kStuck, 0}}),
                  std::invalid_argument);
  const SlipSchedule s({{100, 200, SlipMode::kStuck, 0}});
  CHECK(s.active_at(us_from_ms(99)) == nullptr);
  CHECK(s.active_at(us_from_ms(100)) != nullptr);
  CHECK(s.active_at(us_from_ms(200)) == nullptr);
}

TEST_CASE("encoder carry keeps long-run tick rate") {
  // 100 mm/s for 2.5 ms is 0.25 mm, half a tick at 0.5 mm/tick.
  const RobotGeometry g;
  EncoderSampler enc;
  Rng rng(1);
  PlantState prev = moving(100, 100);
  std::int64_t total = 0;
  for (int i = 0; i < 1000; ++i) {
    const PlantState curr = step_plant(prev, {}, ideal_wheels(), g, 0.0025);
    const Ticks t = enc.sample(prev, curr, g, quiet(), rng);
    CHECK((t.right == 0 || t.right == 1));
    total += t.right;
    prev = curr;
  }
  CHECK(std::abs(total - 500) <= 1);
}

TEST_CASE("encoders count while stuck and stay silent at rest") {
  const RobotGeometry g;
  EncoderSampler enc;
  Rng rng(1);
  const SlipSchedule stuck({{0, 1000, SlipMode::kStuck, 0.0}});
  const PlantState s0 = moving(100, 100);
  const PlantState s1 = step_plant(s0, stuck, ideal_wheels(), g, 0.07);
  const Ticks t = enc.sample(s0, s1, g, quiet(), rng);
  CHECK(t.right > 0);
  CHECK(t.left > 0);

  EncoderSampler idle;
  const PlantState r0;
  const PlantState r1 = step_plant(r0, {}, ideal_wheels(), g, 0.07);
  const Ticks z = idle.sample(r0, r1, g, quiet(), rng);
  CHECK(z.right == 0);
  CHECK(z.left == 0);
}

TEST_CASE("optical flow examples") {
  RobotGeometry g;
  g.flow_sensor_separation = 60;
  Rng rng(1);

  const PlantState a0 = moving(100, 100);
  const PlantState a1 = step_plant(a0, {}, ideal_wheels(), g, 0.1);
  const FlowReading fa = sample_optical_flow(a0, a1, quiet(), rng);
  CHECK(fa.dx_left == doctest::Approx(10.0));
  CHECK(fa.dx_right == doctest::Approx(10.0));

  // w = 1 rad/s with l = 100 needs wheels at +-50 mm/s.
  const PlantState b0 = moving(50, -50);
  const PlantState b1 = step_plant(b0, {}, ideal_wheels(), g, 0.1);
  const FlowReading fb = sample_optical_flow(b0, b1, quiet(), rng);
  CHECK(fb.dx_left == doctest::Approx(-3.0));
  CHECK(fb.dx_right == doctest::Approx(3.0));

  const SlipSchedule stuck({{0, 1000, SlipMode::kStuck, 0.0}});
  const PlantState c1 = step_plant(a0, stuck, ideal_wheels(), g, 0.1);
  const FlowReading fc = sample_optical_flow(a0, c1, quiet(), rng);
  CHECK(fc.dx_left == 0.0);
  CHECK(fc.dx_right == 0.0);

  SensorNoise scaled = quiet();
  scaled.flow_scale = 1.1;
  const FlowReading fd = sample_optical_flow(a0, a1, scaled, rng);
  CHECK(fd.dx_left == doctest::Approx(11.0));
}

TEST_CASE("gyro heading examples") {
  Rng rng(2);
  PlantState s;
  CHECK(sample_gyro_heading(s, quiet(), rng) == 0.0);
  s.truth = Posture(0, 0, kPi);
  CHECK(sample_gyro_heading(s, quiet(), rng) == doctest::Approx(kPi));

  s.truth = Posture(0, 0, 0);
  SensorNoise n = quiet();
  n.gyro_sigma = 0.01;
  double sum = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) sum += sample_gyro_heading(s, n, rng);
  CHECK(std::abs(sum / draws) < 3 * 0.01 / 100);
}

TEST_CASE("IR ranging examples") {
  RobotGeometry g;
  Rng rng(3);
  World w;
  w.bounds = {-5000, -5000, 5000, 5000};
  w.walls.push_back({500, -100, 500, 100});
  const IrScan a = sample_ir({0, 0, 0}, w, g, quiet(), rng);
  REQUIRE(a[0].has_value());
  CHECK(*a[0] == doctest::Approx(500));

  World near = w;
  near.walls = {{100, -100, 100, 100}};
  const IrScan b = sample_ir({0, 0, 0}, near, g, quiet(), rng);
  CHECK_FALSE(b[0].has_value());

  // A short segment centred between the forward ray and its neighbour.
  World blind;
  blind.bounds = {-5000, -5000, 5000, 5000};
  const IrScan empty = sample_ir({0, 0, 0}, blind, g, quiet(), rng);
  const double mid = kPi / 5.0;
  const double r = 600;
  const double half = 0.2;
  blind.walls.push_back({r * std::cos(mid - half), r * std::sin(mid - half),
                         r * std::cos(mid + half), r * std::sin(mid + half)});
  const IrScan with = sample_ir({0, 0, 0}, blind, g, quiet(), rng);
  for (std::size_t i = 0; i < 5; ++i) CHECK(with[i] == empty[i]);
}

TEST_CASE("cast_ray and clearance") {
  const std::vector<Segment> edges{{10, -5, 10, 5}};
  const auto hit = cast_ray(edges, 0, 0, 0);
  REQUIRE(hit.has_value());
  CHECK(*hit == doctest::Approx(10));
  CHECK_FALSE(cast_ray(edges, 0, 0, kPi).has_value());

  World w;
  w.bounds = {-100, -100, 100, 100};
  w.boxes.push_back({-10, -10, 10, 10});
  CHECK(w.clearance(0, 0) == 0.0);
  CHECK(w.clearance(50, 0) == doctest::Approx(40));
  CHECK(w.clearance(95, 0) == doctest::Approx(5));
}

TEST_CASE("stuck interval: encoders move, flow does not") {
  RobotSetup setup;
  setup.noise = quiet();
  setup.wheels.ideal = true;
  setup.slip = SlipSchedule({{0, 2000, SlipMode::kStuck, 0.0}});
  SimulatedRobot robot(setup, {}, 1);
  robot.set_command({100, 100});
  for (int i = 0; i < 2000; ++i) robot.step();
  CHECK(robot.ticks_right() > 0);
  CHECK(robot.flow_right() == 0.0);
  CHECK(robot.state().truth == Posture{0, 0, 0});
}

TEST_CASE("samplers run at the default rates") {
  const SampleSchedule sched;
  CHECK(1'000'000 / sched.encoder_period == 400);
  CHECK(1'000'000 / sched.flow_period == 1000);
  CHECK(1'000'000 / sched.ir_period == 25);

  RobotSetup setup;
  setup.wheels.ideal = true;
  SimulatedRobot robot(setup, sched, 1);
  robot.set_command({100, 100});
  for (int i = 0; i < 2000; ++i) robot.step();  // 1 s
  CHECK(robot.scans().size() == 25);
  // Noiseless-enough check: 100 mm at 0.5 mm/tick.
  CHECK(std::abs(robot.ticks_right() - 200) <= 2);
}

TEST_CASE("identical seeds give identical robots") {
  RobotSetup setup;
  setup.wheels.ideal = true;
  SimulatedRobot a(setup, {}, 42), b(setup, {}, 42);
  a.set_command({120, 80});
  b.set_command({120, 80});
  for (int i = 0; i < 4000; ++i) {
    a.step();
    b.step();
    if (a.packet_due()) CHECK(a.make_packet() == b.make_packet());
    if (b.packet_due()) b.make_packet();
  }
  CHECK(a.state().truth == b.state().truth);
}
