#pragma once

// Declarative scenario files (YAML) with strict key checking.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffswarm/comms.hpp"
#include "diffswarm/control.hpp"
#include "diffswarm/estimation.hpp"
#include "diffswarm/robot.hpp"
#include "diffswarm/sim.hpp"
#include "diffswarm/swarm.hpp"

namespace diffswarm::scenario {

/// Parse or validation failure. `line` is 1-based, 0 when unknown.
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(const std::string& message, int line = 0);
  int line() const { return line_; }

 private:
  int line_;
};

enum class ReferenceType { kCircle, kFigureEight, kLine, kStationary };

struct ReferenceSpec {
  ReferenceType type = ReferenceType::kCircle;
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 1000.0;
  double speed = 100.0;
  double start_phase = 0.0;
  double amplitude_x = 500.0;
  double amplitude_y = 250.0;
  double period = 30.0;
  Posture start;  // line and stationary

  control::ReferenceTrajectory build(double duration_s) const;
};

enum class Feedback { kTruth, kEstimate };

struct ControlSpec {
  control::Gains gains;
  Feedback feedback = Feedback::kTruth;
  std::int64_t period_ms = 70;
};

struct EkfSpec {
  estimation::EkfConfig config = estimation::EkfConfig::defaults();
  estimation::Vec5 initial_cov_diag = (estimation::Vec5() << 25.0, 25.0, 1e-3, 100.0, 1e-2).finished();
};

struct ConsensusSpec {
  swarm::ConsensusConfig config;
  std::vector<double> initial_headings;  // overrides robot headings when set
  double random_spread = 0.0;            // else headings uniform in +-spread when > 0
  double max_duration_s = 30.0;
};

enum class MapPose { kTruth, kEstimate };

struct PlanningSpec {
  double resolution = 50.0;
  int occupied_threshold = 2;
  int median_window = 3;
  double margin = 80.0;
  double start_x = 0.0;
  double start_y = 0.0;
  double goal_x = 0.0;
  double goal_y = 0.0;
  MapPose map_pose = MapPose::kTruth;
};

struct OutputsSpec {
  bool trajectory = true;
  bool errors = true;
  bool estimates = true;
  bool consensus = true;
  bool path = true;
  bool map = true;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration_s = 30.0;
  sim::SampleSchedule schedule;
  sim::World world;
  comms::ChannelModel channel;
  std::vector<sim::RobotSetup> robots;
  ReferenceSpec reference;
  ControlSpec control;
  EkfSpec ekf;
  ConsensusSpec consensus;
  PlanningSpec planning;
  OutputsSpec outputs;
  std::vector<estimation::Variant> variants{
      estimation::Variant::kAdaptive, estimation::Variant::kNonAdaptive,
      estimation::Variant::kFixedDt, estimation::Variant::kDeadReckonEncoders,
      estimation::Variant::kDeadReckonFlow};
  // Normalized YAML after overrides; hashed with the seed into `digest`.
  std::string canonical;
  std::uint64_t digest = 0;

  /// Cross-field checks; throws ScenarioError.
  void validate() const;
};

/// Parses YAML text after applying `overrides` ("a.b.0.c=value", value read
/// as YAML). Unknown keys are rejected with their line number.
Scenario parse_scenario(const std::string& yaml_text,
                        const std::vector<std::string>& overrides = {});
Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides = {});

/// Replaces the seed and refreshes the digest.
void set_seed(Scenario& s, std::uint64_t seed);

}  // namespace diffswarm::scenario
