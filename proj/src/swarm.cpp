#include "diffswarm/swarm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace diffswarm::swarm {
namespace {

struct StreakTracker {
  int streak = 0;

  // Returns true once the streak reaches `needed`.
  bool observe(double spread, double epsilon, int needed) {
    streak = spread < epsilon ? streak + 1 : 0;
    return streak >= needed;
  }
};

}  // namespace

void ConsensusConfig::validate() const {
  if (!(gain > 0.0 && gain < 2.0)) throw std::invalid_argument("consensus: gain must be in (0, 2)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("consensus: epsilon must be > 0");
  if (max_rounds < 1) throw std::invalid_argument("consensus: max_rounds must be >= 1");
  if (stable_rounds < 1) throw std::invalid_argument("consensus: stable_rounds must be >= 1");
  if (round_period_ms <= 0 || turn_control_period_ms <= 0 || staleness_horizon_ms <= 0) {
    throw std::invalid_argument("consensus: periods must be > 0");
  }
  if (!(turn_time_constant > 0.0 && max_turn_rate > 0.0)) {
    throw std::invalid_argument("consensus: turn loop parameters must be > 0");
  }
}

double mean_heading(std::span<const double> headings) {
  if (headings.empty()) throw std::domain_error("mean_heading: empty swarm");
  return std::accumulate(headings.begin(), headings.end(), 0.0) /
         static_cast<double>(headings.size());
}

double mean_heading(const SwarmState& s) { return mean_heading(std::span(s.headings)); }

SwarmState consensus_step(const SwarmState& s, double gain) {
  const double mean = mean_heading(s);
  SwarmState next{s.headings, s.round + 1};
  for (double& h : next.headings) h += gain * (mean - h);
  return next;
}

double heading_spread(std::span<const double> headings) {
  if (headings.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(headings.begin(), headings.end());
  return *hi - *lo;
}

ConsensusResult run_synchronous_consensus(const SwarmState& initial, const ConsensusConfig& cfg) {
  cfg.validate();
  if (initial.headings.size() < 2) throw std::invalid_argument("consensus needs N >= 2");
  ConsensusResult result;
  StreakTracker streak;
  SwarmState s = initial;
  for (int round = 0; round < cfg.max_rounds; ++round) {
    ConsensusRecord rec;
    rec.round = round;
    rec.t = static_cast<double>(round * cfg.round_period_ms) / 1000.0;
    rec.headings = s.headings;
    rec.mean = mean_heading(s);
    rec.spread = heading_spread(s.headings);
    result.trace.push_back(rec);
    result.rounds = round + 1;
    if (streak.observe(rec.spread, cfg.epsilon, cfg.stable_rounds)) {
      result.converged = true;
      result.declared_round = round;
      result.converged_round = round - cfg.stable_rounds + 1;
      result.converged_time = result.trace[result.converged_round].t;
      break;
    }
    s = consensus_step(s, cfg.gain);
  }
  result.final_true_headings = s.headings;
  return result;
}

ConsensusResult run_networked_consensus(const std::vector<sim::RobotSetup>& setups,
                                        const comms::ChannelModel& channel_model,
                                        const ConsensusConfig& cfg, const control::Gains& gains,
                                        const sim::SampleSchedule& schedule, std::uint64_t seed,
                                        double max_duration_s) {
  cfg.validate();
  gains.validate();
  if (setups.size() < 2) throw std::invalid_argument("consensus needs N >= 2");

  std::vector<sim::SimulatedRobot> robots;
  robots.reserve(setups.size());
  for (const auto& s : setups) robots.emplace_back(s, schedule, seed);

  comms::EventChannel uplink(channel_model);
  comms::EventChannel downlink(channel_model);
  comms::FreshnessBuffer buffer;

  struct RobotSide {
    std::optional<double> target;
    std::uint32_t target_stamp = 0;
  };
  std::vector<RobotSide> side(robots.size());
  std::map<std::uint8_t, std::size_t> index_of;
  for (std::size_t i = 0; i < robots.size(); ++i) index_of[robots[i].id()] = i;

  ConsensusResult result;
  StreakTracker streak;
  const sim::TimeUs round_period = sim::us_from_ms(cfg.round_period_ms);
  const sim::TimeUs turn_period = sim::us_from_ms(cfg.turn_control_period_ms);
  const sim::TimeUs staleness = sim::us_from_ms(cfg.staleness_horizon_ms);
  const sim::TimeUs end = std::llround(max_duration_s * 1e6);
  int round = 0;

  for (sim::TimeUs t = 0; t <= end; t += schedule.plant_step) {
    for (auto& d : uplink.deliver_until(t)) {
      const auto decoded = comms::decode_frame(d.bytes);
      result.uplink.count(decoded.error);
      if (decoded.packet && index_of.count(decoded.packet->robot_id)) {
        buffer.update(*decoded.packet, t);
      }
    }
    for (auto& d : downlink.deliver_until(t)) {
      const auto decoded = comms::decode_command_frame(d.bytes);
      result.downlink.count(decoded.error);
      if (!decoded.command) continue;
      auto it = index_of.find(decoded.command->robot_id);
      if (it == index_of.end()) continue;
      auto& rs = side[it->second];
      if (!rs.target || decoded.command->t_sent > rs.target_stamp) {
        rs.target = static_cast<double>(decoded.command->target_heading) * 1e-6;
        rs.target_stamp = decoded.command->t_sent;
      }
    }

    if (t % round_period == 0) {
      std::vector<double> headings;
      headings.reserve(robots.size());
      for (const auto& r : robots) {
        const auto entry = buffer.latest(r.id());
        if (!entry) break;
        if (t - entry->t_received > staleness) ++result.staleness_warnings;
        headings.push_back(comms::heading_from_wire(entry->packet.gyro_heading));
      }
      if (headings.size() == robots.size()) {
        ConsensusRecord rec;
        rec.round = round;
        rec.t = sim::seconds(t);
        rec.mean = mean_heading(headings);
        rec.spread = heading_spread(headings);
        rec.headings = headings;
        result.trace.push_back(rec);
        if (streak.observe(rec.spread, cfg.epsilon, cfg.stable_rounds)) {
          result.converged = true;
          result.declared_round = round;
          result.converged_round = round - cfg.stable_rounds + 1;
          for (const auto& r : result.trace) {
            if (r.round == result.converged_round) result.converged_time = r.t;
          }
        }
        for (std::size_t i = 0; i < robots.size(); ++i) {
          comms::HeadingCommand cmd;
          cmd.robot_id = robots[i].id();
          cmd.t_sent = static_cast<std::uint32_t>(t / 1000);
          const double target = headings[i] + cfg.gain * (rec.mean - headings[i]);
          cmd.target_heading = static_cast<std::int32_t>(std::llround(target * 1e6));
          downlink.send(comms::encode_frame(cmd), t, cmd.robot_id, robots[i].downlink_rng());
        }
      }
      ++round;
      result.rounds = round;
      if (result.converged || round >= cfg.max_rounds) break;
    }

    if (t % turn_period == 0) {
      for (std::size_t i = 0; i < robots.size(); ++i) {
        auto& robot = robots[i];
        if (!side[i].target) {
          robot.set_command({0.0, 0.0});
          continue;
        }
        const double heading = robot.read_gyro();
        const double error = wrap_angle(*side[i].target - heading);
        const double w_r = std::clamp(error / cfg.turn_time_constant, -cfg.max_turn_rate,
                                      cfg.max_turn_rate);
        const Posture here(0.0, 0.0, heading);
        robot.set_command(
            control::tracking_control(here, here, 0.0, w_r, gains, robot.setup().geometry));
      }
    }

    for (auto& robot : robots) {
      if (robot.packet_due()) {
        const auto packet = robot.make_packet();
        uplink.send(comms::encode_frame(packet), t, robot.id(), robot.uplink_rng());
      }
    }
    for (auto& robot : robots) robot.step();
  }

  result.frames_sent = uplink.sent() + downlink.sent();
  result.frames_dropped = uplink.dropped() + downlink.dropped();
  for (const auto& r : robots) result.final_true_headings.push_back(r.state().truth.theta);
  return result;
}

}  // namespace diffswarm::swarm
