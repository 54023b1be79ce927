#include "diffswarm/robot.hpp"

#include <cmath>
#include <stdexcept>

namespace diffswarm::sim {

void RobotSetup::validate() const {
  geometry.validate();
  noise.validate();
  if (!(wheels.motor_time_constant > 0.0)) {
    throw std::invalid_argument("wheels: motor_time_constant must be > 0");
  }
  if (send_interval_min_ms <= 0 || send_interval_min_ms > send_interval_max_ms) {
    throw std::invalid_argument("robot: need 0 < send_interval_min_ms <= send_interval_max_ms");
  }
}

SimulatedRobot::SimulatedRobot(RobotSetup setup, SampleSchedule schedule, std::uint64_t seed,
                               const World* world)
    : setup_(std::move(setup)),
      schedule_(schedule),
      world_(world),
      encoder_rng_(Rng::derive(seed, setup_.id, Stream::kEncoder)),
      flow_rng_(Rng::derive(seed, setup_.id, Stream::kFlow)),
      gyro_rng_(Rng::derive(seed, setup_.id, Stream::kGyro)),
      ir_rng_(Rng::derive(seed, setup_.id, Stream::kIr)),
      jitter_rng_(Rng::derive(seed, setup_.id, Stream::kSendJitter)),
      uplink_rng_(Rng::derive(seed, setup_.id, Stream::kUplink)),
      downlink_rng_(Rng::derive(seed, setup_.id, Stream::kDownlink)) {
  setup_.validate();
  schedule_.validate();
  state_.truth = setup_.initial;
  last_encoder_state_ = state_;
  last_flow_state_ = state_;
  last_scan_.fill(std::nullopt);
}

void SimulatedRobot::step() {
  state_ = step_plant(state_, setup_.slip, setup_.wheels, setup_.geometry,
                      seconds(schedule_.plant_step));
  const TimeUs t = state_.time;
  if (t % schedule_.encoder_period == 0) {
    const Ticks ticks =
        encoders_.sample(last_encoder_state_, state_, setup_.geometry, setup_.noise, encoder_rng_);
    ticks_left_ += ticks.left;
    ticks_right_ += ticks.right;
    last_encoder_state_ = state_;
  }
  if (t % schedule_.flow_period == 0) {
    const FlowReading flow = sample_optical_flow(last_flow_state_, state_, setup_.noise, flow_rng_);
    flow_left_ += flow.dx_left;
    flow_right_ += flow.dx_right;
    last_flow_state_ = state_;
  }
  if (t % schedule_.ir_period == 0) {
    if (world_ != nullptr) {
      last_scan_ = sample_ir(state_.truth, *world_, setup_.geometry, setup_.noise, ir_rng_);
    }
    scans_.push_back({t, state_.truth, last_scan_});
  }
}

double SimulatedRobot::read_gyro() { return sample_gyro_heading(state_, setup_.noise, gyro_rng_); }

comms::SensorPacket SimulatedRobot::make_packet() {
  comms::SensorPacket p;
  p.robot_id = setup_.id;
  p.t_sent = static_cast<std::uint32_t>(state_.time / 1000);
  p.ticks_left = comms::wrap_counter(ticks_left_);
  p.ticks_right = comms::wrap_counter(ticks_right_);
  p.flow_dx_left = comms::wrap_counter(std::llround(flow_left_ * 10.0));
  p.flow_dx_right = comms::wrap_counter(std::llround(flow_right_ * 10.0));
  p.gyro_heading = comms::quantize_heading(read_gyro());
  for (std::size_t i = 0; i < p.ir.size(); ++i) p.ir[i] = comms::quantize_ir(last_scan_[i]);

  std::int64_t interval_ms = setup_.send_interval_min_ms;
  if (setup_.send_interval_max_ms > setup_.send_interval_min_ms) {
    interval_ms = jitter_rng_.uniform_int(setup_.send_interval_min_ms, setup_.send_interval_max_ms);
  }
  next_send_ = state_.time + us_from_ms(interval_ms);
  return p;
}

}  // namespace diffswarm::sim
