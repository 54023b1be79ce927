#pragma once

// A simulated robot: plant, sensor samplers on their own schedules, and the
// packet it reports to the server.

#include <cstdint>
#include <vector>

#include "diffswarm/comms.hpp"
#include "diffswarm/core.hpp"
#include "diffswarm/random.hpp"
#include "diffswarm/sim.hpp"

namespace diffswarm::sim {

struct RobotSetup {
  std::uint8_t id = 0;
  Posture initial;
  RobotGeometry geometry;
  SensorNoise noise;
  WheelDynamics wheels;
  SlipSchedule slip;
  // Interval between packets, drawn uniformly from [min, max] ms per packet.
  std::int64_t send_interval_min_ms = 70;
  std::int64_t send_interval_max_ms = 70;
  // When false the server timestamps packets on receipt instead.
  bool sender_clock_reliable = true;

  void validate() const;
};

struct ScanRecord {
  TimeUs t = 0;
  Posture truth;
  IrScan scan;
};

class SimulatedRobot {
 public:
  /// `world` may be null, in which case every IR ray reports out of range.
  SimulatedRobot(RobotSetup setup, SampleSchedule schedule, std::uint64_t seed,
                 const World* world = nullptr);

  const RobotSetup& setup() const { return setup_; }
  std::uint8_t id() const { return setup_.id; }
  const PlantState& state() const { return state_; }
  TimeUs time() const { return state_.time; }

  void set_command(WheelSpeeds command) { state_.wheel_command = command; }

  /// Advances one plant step and runs every sampler that falls due at the
  /// new time.
  void step();

  bool packet_due() const { return state_.time >= next_send_; }
  /// Builds the packet for the current time and schedules the next one.
  comms::SensorPacket make_packet();

  /// Gyro reading at the current time (consumes a gyro draw).
  double read_gyro();

  std::int64_t ticks_left() const { return ticks_left_; }
  std::int64_t ticks_right() const { return ticks_right_; }
  double flow_left() const { return flow_left_; }
  double flow_right() const { return flow_right_; }
  const std::vector<ScanRecord>& scans() const { return scans_; }

  Rng& uplink_rng() { return uplink_rng_; }
  Rng& downlink_rng() { return downlink_rng_; }

 private:
  RobotSetup setup_;
  SampleSchedule schedule_;
  const World* world_;
  PlantState state_;
  PlantState last_encoder_state_;
  PlantState last_flow_state_;
  EncoderSampler encoders_;
  Rng encoder_rng_;
  Rng flow_rng_;
  Rng gyro_rng_;
  Rng ir_rng_;
  Rng jitter_rng_;
  Rng uplink_rng_;
  Rng downlink_rng_;
  std::int64_t ticks_left_ = 0;
  std::int64_t ticks_right_ = 0;
  double flow_left_ = 0.0;
  double flow_right_ = 0.0;
  IrScan last_scan_{};
  std::vector<ScanRecord> scans_;
  TimeUs next_send_ = 0;
};

}  // namespace diffswarm::sim
