#pragma once

// Heading consensus: theta_i <- theta_i + K (theta_m - theta_i), with theta_m
// the arithmetic mean of all headings. Headings are plain scalars here; the
// update is only meaningful while the spread stays well inside (-pi, pi).

#include <cstdint>
#include <span>
#include <vector>

#include "diffswarm/comms.hpp"
#include "diffswarm/control.hpp"
#include "diffswarm/robot.hpp"

namespace diffswarm::swarm {

enum class ConsensusMode { kSynchronous, kNetworked };

struct ConsensusConfig {
  double gain = 0.2;       // K, in (0, 2)
  double epsilon = 0.01;   // rad
  int max_rounds = 300;
  ConsensusMode mode = ConsensusMode::kNetworked;
  int stable_rounds = 10;
  std::int64_t round_period_ms = 70;
  std::int64_t staleness_horizon_ms = 500;
  // Robot-side turn-in-place loop.
  std::int64_t turn_control_period_ms = 10;
  double turn_time_constant = 0.1;  // s
  double max_turn_rate = 2.0;       // rad/s

  void validate() const;
};

struct SwarmState {
  std::vector<double> headings;
  int round = 0;
};

/// Throws std::domain_error for an empty swarm.
double mean_heading(const SwarmState& s);
double mean_heading(std::span<const double> headings);

/// One simultaneous update of every heading against the pre-step mean.
SwarmState consensus_step(const SwarmState& s, double gain);

/// Largest pairwise difference, i.e. max - min.
double heading_spread(std::span<const double> headings);

struct ConsensusRecord {
  double t = 0.0;  // s
  int round = 0;
  std::vector<double> headings;
  double mean = 0.0;
  double spread = 0.0;
};

struct ConsensusResult {
  std::vector<ConsensusRecord> trace;
  bool converged = false;
  int rounds = 0;
  int converged_round = -1;      // first round of the stable streak
  int declared_round = -1;       // round at which the streak reached stable_rounds
  double converged_time = -1.0;  // s, time of converged_round
  std::uint64_t staleness_warnings = 0;
  comms::DecodeStats uplink;
  comms::DecodeStats downlink;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_dropped = 0;
  std::vector<double> final_true_headings;
};

/// Ideal iteration of consensus_step, one round per round period.
ConsensusResult run_synchronous_consensus(const SwarmState& initial, const ConsensusConfig& cfg);

/// Robots report gyro headings over `channel` to a server that runs one
/// round per round period on the freshest buffered heading of every robot,
/// then sends each robot the target theta_i + K (theta_m - theta_i). Robots
/// turn in place toward their newest target through the tracking law.
/// Convergence is declared once the buffered spread stays below epsilon for
/// stable_rounds consecutive rounds.
ConsensusResult run_networked_consensus(const std::vector<sim::RobotSetup>& robots,
                                        const comms::ChannelModel& channel,
                                        const ConsensusConfig& cfg, const control::Gains& gains,
                                        const sim::SampleSchedule& schedule, std::uint64_t seed,
                                        double max_duration_s);

}  // namespace diffswarm::swarm
