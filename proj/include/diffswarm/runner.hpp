#pragma once

// Scenario execution: one deterministic event loop per run, plus the CSV and
// summary writers used by the command-line tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffswarm/planning.hpp"
#include "diffswarm/scenario.hpp"

namespace diffswarm::runner {

enum class Mode { kTrack, kLocalize, kConsensus, kPlan, kCompare };

std::string_view to_string(Mode m);

struct TrajectoryRow {
  double t = 0.0;
  Posture reference;
  Posture current;  // truth
  Posture error;    // error_posture(reference, truth)
  WheelSpeeds command;
  double lyapunov = 0.0;
};

struct EstimateRow {
  double t = 0.0;
  estimation::Variant variant = estimation::Variant::kAdaptive;
  estimation::EkfBelief belief;
  bool slip = false;
  Posture truth;  // at the packet's send time
};

struct VariantMetrics {
  estimation::Variant variant = estimation::Variant::kAdaptive;
  std::size_t samples = 0;
  double position_rmse = 0.0;   // mm
  double terminal_error = 0.0;  // mm, at the last estimate
  std::uint64_t stale = 0;
  std::uint64_t slip_steps = 0;
  std::uint64_t stream_digest = 0;
};

struct RobotResult {
  std::uint8_t id = 0;
  std::vector<TrajectoryRow> trajectory;
  std::vector<EstimateRow> estimates;
  std::vector<VariantMetrics> variants;
  double tracking_rmse = 0.0;          // planar, mm
  double terminal_planar_error = 0.0;  // mm
  double terminal_heading_error = 0.0; // rad
  // Over rows with t > settle time.
  double max_planar_error_settled = 0.0;
  double max_heading_error_settled = 0.0;
  double max_lyapunov_increase_settled = 0.0;
};

enum class PlanStatus { kNotRun, kFound, kNoPath, kInvalidEndpoint };

struct PlanResult {
  PlanStatus status = PlanStatus::kNotRun;
  std::string message;
  std::optional<planning::OccupancyGrid> raw_map;
  std::optional<planning::OccupancyGrid> filtered_map;
  std::optional<planning::OccupancyGrid> planning_map;  // filtered then inflated
  planning::GridPath path;
  double path_length_mm = 0.0;
  double clearance_mm = 0.0;
  std::uint64_t expanded = 0;
  planning::IngestStats ingest;
};

struct RunSummary {
  Mode mode = Mode::kTrack;
  std::string name;
  std::uint64_t seed = 0;
  std::uint64_t digest = 0;
  double sim_duration_s = 0.0;
  double settle_time_s = 20.0;
  double wall_clock_s = 0.0;
  std::vector<RobotResult> robots;
  comms::DecodeStats uplink;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_dropped = 0;
  std::optional<swarm::ConsensusResult> consensus;
  PlanResult plan;
};

struct RunOptions {
  double settle_time_s = 20.0;
};

/// Dispatches on the mode. Track, localize and compare share one loop in
/// which every estimator variant consumes the same packet stream.
RunSummary run(const scenario::Scenario& s, Mode mode, const RunOptions& options = {});

RunSummary run_tracking(const scenario::Scenario& s, Mode mode, const RunOptions& options = {});
RunSummary run_consensus(const scenario::Scenario& s);
RunSummary run_plan(const scenario::Scenario& s, const RunOptions& options = {});

/// Writes every enabled artifact for the mode into `dir` (created if needed),
/// including summary.txt without the wall-clock line.
void write_outputs(const RunSummary& summary, const scenario::Scenario& s,
                   const std::filesystem::path& dir);

/// Structured "key: value" text.
std::string format_summary(const RunSummary& summary, bool include_wall_clock);

/// One row per variant and robot: robot, variant, samples, rmse, terminal.
std::string format_compare_csv(const RunSummary& summary);

/// printf("%.6g").
std::string fmt(double v);

}  // namespace diffswarm::runner
