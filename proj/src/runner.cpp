#include "diffswarm/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

namespace diffswarm::runner {
namespace {

using estimation::Estimator;
using estimation::Variant;
using scenario::Scenario;

bool is_ekf(Variant v) {
  return v == Variant::kAdaptive || v == Variant::kNonAdaptive || v == Variant::kFixedDt;
}

// Runtime state of one robot in the tracking loop.
struct RobotRun {
  std::unique_ptr<sim::SimulatedRobot> robot;
  std::vector<Estimator> estimators;
  std::size_t control_estimator = 0;
  std::map<std::uint32_t, Posture> truth_at_send;
  std::vector<Posture> mapping_poses;  // one per recorded scan
  RobotResult result;
};

// Mean pose of `e` carried forward to `t_us` with its own (v, w).
Posture propagated_pose(const Estimator& e, sim::TimeUs t_us, const Posture& fallback) {
  if (!e.initialized()) return fallback;
  const auto& m = e.belief().mean;
  const double dt = std::max(0.0, sim::seconds(t_us) - e.last_t_ms() * 1e-3);
  return integrate_unicycle(e.belief().pose(), {m(estimation::kV), m(estimation::kW)}, dt);
}

void finalize_tracking_metrics(RobotResult& r, double settle) {
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
    const auto& row = r.trajectory[i];
    const double planar = std::hypot(row.error.x, row.error.y);
    sum_sq += planar * planar;
    if (row.t > settle) {
      r.max_planar_error_settled = std::max(r.max_planar_error_settled, planar);
      r.max_heading_error_settled = std::max(r.max_heading_error_settled, std::abs(row.error.theta));
      if (i > 0 && r.trajectory[i - 1].t > settle) {
        r.max_lyapunov_increase_settled = std::max(r.max_lyapunov_increase_settled,
                                                   row.lyapunov - r.trajectory[i - 1].lyapunov);
      }
    }
  }
  if (!r.trajectory.empty()) {
    r.tracking_rmse = std::sqrt(sum_sq / static_cast<double>(r.trajectory.size()));
    const auto& last = r.trajectory.back();
    r.terminal_planar_error = std::hypot(last.error.x, last.error.y);
    r.terminal_heading_error = std::abs(last.error.theta);
  }
}

void finalize_estimate_metrics(RobotRun& run) {
  for (const auto& e : run.estimators) {
    VariantMetrics m;
    m.variant = e.variant();
    m.stale = e.stale_count();
    m.slip_steps = e.slip_steps();
    m.stream_digest = e.stream_digest();
    double sum_sq = 0.0;
    for (const auto& row : run.result.estimates) {
      if (row.variant != m.variant) continue;
      const double err = std::hypot(row.belief.mean(estimation::kX) - row.truth.x,
                                    row.belief.mean(estimation::kY) - row.truth.y);
      sum_sq += err * err;
      ++m.samples;
      m.terminal_error = err;
    }
    if (m.samples > 0) m.position_rmse = std::sqrt(sum_sq / static_cast<double>(m.samples));
    run.result.variants.push_back(m);
  }
}

std::vector<RobotRun> make_runs(const Scenario& s, const sim::World* world) {
  std::vector<RobotRun> runs;
  const double nominal = sim::seconds(s.schedule.packet_period);
  for (const auto& setup : s.robots) {
    RobotRun run;
    run.robot = std::make_unique<sim::SimulatedRobot>(setup, s.schedule, s.seed, world);
    run.result.id = setup.id;
    for (Variant v : s.variants) {
      run.estimators.emplace_back(v, s.ekf.config, setup.geometry, setup.initial,
                                  s.ekf.initial_cov_diag, nominal);
    }
    const auto adaptive = std::find(s.variants.begin(), s.variants.end(), Variant::kAdaptive);
    const auto first_ekf = std::find_if(s.variants.begin(), s.variants.end(), is_ekf);
    const auto chosen = adaptive != s.variants.end() ? adaptive : first_ekf;
    run.control_estimator =
        chosen != s.variants.end() ? static_cast<std::size_t>(chosen - s.variants.begin()) : 0;
    runs.push_back(std::move(run));
  }
  return runs;
}

RunSummary simulate(const Scenario& s, Mode mode, const RunOptions& options,
                    const sim::World* world, std::vector<RobotRun>& runs) {
  RunSummary summary;
  summary.mode = mode;
  summary.name = s.name;
  summary.seed = s.seed;
  summary.digest = s.digest;
  summary.sim_duration_s = s.duration_s;
  summary.settle_time_s = options.settle_time_s;

  runs = make_runs(s, world);
  std::map<std::uint8_t, std::size_t> index_of;
  for (std::size_t i = 0; i < runs.size(); ++i) index_of[runs[i].result.id] = i;

  const auto reference = s.reference.build(s.duration_s + 1.0);
  comms::EventChannel uplink(s.channel);
  comms::FreshnessBuffer buffer;
  const sim::TimeUs end = std::llround(s.duration_s * 1e6);
  const sim::TimeUs control_period = sim::us_from_ms(s.control.period_ms);

  for (sim::TimeUs t = 0; t <= end; t += s.schedule.plant_step) {
    for (auto& d : uplink.deliver_until(t)) {
      auto decoded = comms::decode_frame(d.bytes);
      summary.uplink.count(decoded.error);
      if (!decoded.packet) continue;
      auto it = index_of.find(decoded.packet->robot_id);
      if (it == index_of.end()) continue;
      RobotRun& run = runs[it->second];
      comms::SensorPacket packet = *decoded.packet;
      const auto truth_it = run.truth_at_send.find(packet.t_sent);
      const Posture truth = truth_it != run.truth_at_send.end() ? truth_it->second : Posture{};
      if (!run.robot->setup().sender_clock_reliable) {
        packet.t_sent = static_cast<std::uint32_t>(t / 1000);
      }
      if (!buffer.update(packet, t)) continue;
      for (auto& est : run.estimators) {
        if (const auto rec = est.process(packet)) {
          run.result.estimates.push_back(
              {rec->t_ms * 1e-3, est.variant(), rec->belief, rec->slip, truth});
        }
      }
    }

    if (t % control_period == 0) {
      const double ts = sim::seconds(t);
      const auto ref = control::reference_at(reference, ts);
      for (auto& run : runs) {
        auto& robot = *run.robot;
        const Posture truth = robot.state().truth;
        const Posture feedback =
            s.control.feedback == scenario::Feedback::kTruth
                ? truth
                : propagated_pose(run.estimators[run.control_estimator], t, robot.setup().initial);
        const WheelSpeeds u = control::tracking_control(ref.pose, feedback, ref.v, ref.w,
                                                        s.control.gains, robot.setup().geometry);
        robot.set_command(u);
        const Posture e = error_posture(ref.pose, truth);
        run.result.trajectory.push_back({ts, ref.pose, truth, e, u, control::lyapunov_value(e)});
      }
    }

    for (auto& run : runs) {
      auto& robot = *run.robot;
      if (!robot.packet_due()) continue;
      const auto packet = robot.make_packet();
      run.truth_at_send[packet.t_sent] = robot.state().truth;
      uplink.send(comms::encode_frame(packet), t, robot.id(), robot.uplink_rng());
    }

    for (auto& run : runs) {
      auto& robot = *run.robot;
      const std::size_t scans = robot.scans().size();
      robot.step();
      if (robot.scans().size() != scans) {
        run.mapping_poses.push_back(
            propagated_pose(run.estimators[run.control_estimator], robot.time(),
                            robot.setup().initial));
      }
    }
  }

  summary.frames_sent = uplink.sent();
  summary.frames_dropped = uplink.dropped();
  for (auto& run : runs) {
    finalize_tracking_metrics(run.result, options.settle_time_s);
    finalize_estimate_metrics(run);
  }
  return summary;
}

std::string fmt_posture_csv(const Posture& p) {
  return fmt(p.x) + "," + fmt(p.y) + "," + fmt(p.theta);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view plan_status(PlanStatus s) {
  switch (s) {
    case PlanStatus::kNotRun: return "not_run";
    case PlanStatus::kFound: return "found";
    case PlanStatus::kNoPath: return "no_path";
    case PlanStatus::kInvalidEndpoint: return "invalid_endpoint";
  }
  return "unknown";
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kTrack: return "track";
    case Mode::kLocalize: return "localize";
    case Mode::kConsensus: return "consensus";
    case Mode::kPlan: return "plan";
    case Mode::kCompare: return "compare";
  }
  return "unknown";
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

RunSummary run_tracking(const Scenario& s, Mode mode, const RunOptions& options) {
  std::vector<RobotRun> runs;
  RunSummary summary = simulate(s, mode, options, nullptr, runs);
  for (auto& run : runs) summary.robots.push_back(std::move(run.result));
  return summary;
}

RunSummary run_consensus(const Scenario& s) {
  RunSummary summary;
  summary.mode = Mode::kConsensus;
  summary.name = s.name;
  summary.seed = s.seed;
  summary.digest = s.digest;

  std::vector<double> headings;
  if (!s.consensus.initial_headings.empty()) {
    headings = s.consensus.initial_headings;
  } else if (s.consensus.random_spread > 0.0) {
    Rng rng = Rng::derive(s.seed, 0, Stream::kInitial);
    for (std::size_t i = 0; i < s.robots.size(); ++i) {
      headings.push_back(rng.uniform(-s.consensus.random_spread, s.consensus.random_spread));
    }
  } else {
    for (const auto& r : s.robots) headings.push_back(r.initial.theta);
  }

  if (s.consensus.config.mode == swarm::ConsensusMode::kSynchronous) {
    summary.consensus = swarm::run_synchronous_consensus({headings, 0}, s.consensus.config);
  } else {
    auto setups = s.robots;
    for (std::size_t i = 0; i < setups.size(); ++i) {
      setups[i].initial = Posture(setups[i].initial.x, setups[i].initial.y, headings[i]);
    }
    summary.consensus = swarm::run_networked_consensus(setups, s.channel, s.consensus.config,
                                                       s.control.gains, s.schedule, s.seed,
                                                       s.consensus.max_duration_s);
    summary.uplink = summary.consensus->uplink;
    summary.frames_sent = summary.consensus->frames_sent;
    summary.frames_dropped = summary.consensus->frames_dropped;
  }
  const auto& trace = summary.consensus->trace;
  summary.sim_duration_s = trace.empty() ? 0.0 : trace.back().t;
  return summary;
}

RunSummary run_plan(const Scenario& s, const RunOptions& options) {
  std::vector<RobotRun> runs;
  RunSummary summary = simulate(s, Mode::kPlan, options, &s.world, runs);
  const auto& cfg = s.planning;
  PlanResult& plan = summary.plan;

  // One spare cell on every side so hits on the boundary walls land inside.
  sim::Rect area = s.world.bounds;
  area.min_x -= cfg.resolution;
  area.min_y -= cfg.resolution;
  area.max_x += cfg.resolution;
  area.max_y += cfg.resolution;
  auto grid = planning::OccupancyGrid::covering(area, cfg.resolution, cfg.occupied_threshold);
  for (const auto& run : runs) {
    const auto& scans = run.robot->scans();
    for (std::size_t i = 0; i < scans.size(); ++i) {
      const Posture pose =
          cfg.map_pose == scenario::MapPose::kTruth ? scans[i].truth : run.mapping_poses[i];
      const auto stats =
          planning::ingest_ir_scan(grid, pose, scans[i].scan, run.robot->setup().geometry);
      plan.ingest.hits += stats.hits;
      plan.ingest.skipped += stats.skipped;
    }
  }
  plan.raw_map = grid;
  plan.filtered_map = planning::median_filter(grid, cfg.median_window);
  plan.planning_map = planning::inflate(*plan.filtered_map, cfg.margin, {true});

  const auto start = plan.planning_map->cell_of(cfg.start_x, cfg.start_y);
  const auto goal = plan.planning_map->cell_of(cfg.goal_x, cfg.goal_y);
  try {
    const auto result = planning::astar_search(*plan.planning_map, start, goal);
    plan.expanded = result.expanded.size();
    if (result.path) {
      plan.status = PlanStatus::kFound;
      plan.path = *result.path;
      plan.path_length_mm = plan.path.cost * cfg.resolution;
      plan.clearance_mm = planning::path_clearance(plan.path, *plan.planning_map, s.world);
    } else {
      plan.status = PlanStatus::kNoPath;
      plan.message = "frontier exhausted";
    }
  } catch (const planning::InvalidEndpoint& e) {
    plan.status = PlanStatus::kInvalidEndpoint;
    plan.message = e.what();
  }
  for (auto& run : runs) summary.robots.push_back(std::move(run.result));
  return summary;
}

RunSummary run(const Scenario& s, Mode mode, const RunOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  RunSummary summary;
  switch (mode) {
    case Mode::kConsensus: summary = run_consensus(s); break;
    case Mode::kPlan: summary = run_plan(s, options); break;
    default: summary = run_tracking(s, mode, options); break;
  }
  summary.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

std::string format_compare_csv(const RunSummary& summary) {
  std::string out = "robot,variant,samples,position_rmse,terminal_error\n";
  for (const auto& r : summary.robots) {
    for (const auto& v : r.variants) {
      out += std::to_string(r.id) + "," + std::string(estimation::to_string(v.variant)) + "," +
             std::to_string(v.samples) + "," + fmt(v.position_rmse) + "," +
             fmt(v.terminal_error) + "\n";
    }
  }
  return out;
}

std::string format_summary(const RunSummary& summary, bool include_wall_clock) {
  std::ostringstream o;
  o << "scenario: " << summary.name << '\n'
    << "mode: " << to_string(summary.mode) << '\n'
    << "seed: " << summary.seed << '\n'
    << "config_digest: " << hex(summary.digest) << '\n'
    << "sim_duration_s: " << fmt(summary.sim_duration_s) << '\n'
    << "frames_sent: " << summary.frames_sent << '\n'
    << "frames_dropped: " << summary.frames_dropped << '\n'
    << "frames_accepted: " << summary.uplink.accepted << '\n'
    << "frames_rejected: " << summary.uplink.rejected() << '\n';

  const bool show_tracking = summary.mode == Mode::kTrack || summary.mode == Mode::kLocalize ||
                             summary.mode == Mode::kPlan;
  const bool show_estimates = summary.mode == Mode::kLocalize || summary.mode == Mode::kCompare;
  for (const auto& r : summary.robots) {
    const std::string p = "robot_" + std::to_string(r.id) + ".";
    if (show_tracking) {
      o << p << "tracking_rmse_mm: " << fmt(r.tracking_rmse) << '\n'
        << p << "terminal_planar_error_mm: " << fmt(r.terminal_planar_error) << '\n'
        << p << "terminal_heading_error_rad: " << fmt(r.terminal_heading_error) << '\n'
        << p << "max_planar_error_after_" << fmt(summary.settle_time_s)
        << "s_mm: " << fmt(r.max_planar_error_settled) << '\n'
        << p << "max_heading_error_after_" << fmt(summary.settle_time_s)
        << "s_rad: " << fmt(r.max_heading_error_settled) << '\n';
    }
    if (show_estimates) {
      for (const auto& v : r.variants) {
        const std::string q = p + std::string(estimation::to_string(v.variant)) + ".";
        o << q << "position_rmse_mm: " << fmt(v.position_rmse) << '\n'
          << q << "terminal_error_mm: " << fmt(v.terminal_error) << '\n'
          << q << "samples: " << v.samples << '\n'
          << q << "slip_steps: " << v.slip_steps << '\n'
          << q << "noise_stream_digest: " << hex(v.stream_digest) << '\n';
      }
    }
  }

  if (summary.consensus) {
    const auto& c = *summary.consensus;
    o << "consensus.converged: " << (c.converged ? "true" : "false") << '\n'
      << "consensus.rounds: " << c.rounds << '\n'
      << "consensus.converged_round: " << c.converged_round << '\n'
      << "consensus.declared_round: " << c.declared_round << '\n'
      << "consensus.converged_time_s: " << fmt(c.converged_time) << '\n'
      << "consensus.final_spread_rad: " << fmt(c.trace.empty() ? 0.0 : c.trace.back().spread)
      << '\n'
      << "consensus.staleness_warnings: " << c.staleness_warnings << '\n';
  }

  if (summary.plan.status != PlanStatus::kNotRun) {
    const auto& p = summary.plan;
    o << "plan.status: " << plan_status(p.status) << '\n';
    if (!p.message.empty()) o << "plan.message: " << p.message << '\n';
    o << "plan.ir_hits: " << p.ingest.hits << '\n'
      << "plan.ir_skipped: " << p.ingest.skipped << '\n'
      << "plan.expanded_cells: " << p.expanded << '\n';
    if (p.status == PlanStatus::kFound) {
      o << "plan.path_cells: " << p.path.cells.size() << '\n'
        << "plan.path_cost_cells: " << fmt(p.path.cost) << '\n'
        << "plan.path_length_mm: " << fmt(p.path_length_mm) << '\n'
        << "plan.min_clearance_mm: " << fmt(p.clearance_mm) << '\n';
    }
  }
  if (include_wall_clock) o << "wall_clock_s: " << fmt(summary.wall_clock_s) << '\n';
  return o.str();
}

void write_outputs(const RunSummary& summary, const Scenario& s,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& out = s.outputs;
  const bool tracking = summary.mode == Mode::kTrack || summary.mode == Mode::kLocalize ||
                        summary.mode == Mode::kPlan;
  const bool estimating = summary.mode == Mode::kLocalize || summary.mode == Mode::kCompare;

  for (const auto& r : summary.robots) {
    const std::string id = std::to_string(r.id);
    if (tracking && out.trajectory) {
      std::string csv = "t,x_r,y_r,theta_r,x_c,y_c,theta_c,x_e,y_e,theta_e,v1,v2,V\n";
      for (const auto& row : r.trajectory) {
        csv += fmt(row.t) + "," + fmt_posture_csv(row.reference) + "," +
               fmt_posture_csv(row.current) + "," + fmt_posture_csv(row.error) + "," +
               fmt(row.command.right) + "," + fmt(row.command.left) + "," + fmt(row.lyapunov) +
               "\n";
      }
      write_file(dir / ("trajectory_" + id + ".csv"), csv);
    }
    if (estimating && out.estimates) {
      std::string csv =
          "t,variant,x,y,theta,v,w,var_x,var_y,var_theta,var_v,var_w,slip,x_true,y_true,"
          "theta_true\n";
      for (const auto& row : r.estimates) {
        const auto& m = row.belief.mean;
        const auto& c = row.belief.cov;
        csv += fmt(row.t) + "," + std::string(estimation::to_string(row.variant));
        for (int i = 0; i < 5; ++i) csv += "," + fmt(m(i));
        for (int i = 0; i < 5; ++i) csv += "," + fmt(c(i, i));
        csv += std::string(",") + (row.slip ? "1" : "0") + "," + fmt_posture_csv(row.truth) + "\n";
      }
      write_file(dir / ("estimates_" + id + ".csv"), csv);
    }
    if (estimating && out.errors) {
      std::string csv = "t,variant,x_err,y_err,theta_err,position_err\n";
      for (const auto& row : r.estimates) {
        const double ex = row.belief.mean(estimation::kX) - row.truth.x;
        const double ey = row.belief.mean(estimation::kY) - row.truth.y;
        const double et = wrap_angle(row.belief.mean(estimation::kTheta) - row.truth.theta);
        csv += fmt(row.t) + "," + std::string(estimation::to_string(row.variant)) + "," +
               fmt(ex) + "," + fmt(ey) + "," + fmt(et) + "," + fmt(std::hypot(ex, ey)) + "\n";
      }
      write_file(dir / ("errors_" + id + ".csv"), csv);
    }
  }

  if (summary.mode == Mode::kCompare) write_file(dir / "compare.csv", format_compare_csv(summary));

  if (summary.consensus && out.consensus) {
    const auto& c = *summary.consensus;
    const std::size_t n = c.trace.empty() ? 0 : c.trace.front().headings.size();
    std::string csv = "t,round";
    for (std::size_t i = 0; i < n; ++i) csv += ",theta_" + std::to_string(i + 1);
    csv += ",theta_m,spread\n";
    for (const auto& rec : c.trace) {
      csv += fmt(rec.t) + "," + std::to_string(rec.round);
      for (double h : rec.headings) csv += "," + fmt(h);
      csv += "," + fmt(rec.mean) + "," + fmt(rec.spread) + "\n";
    }
    write_file(dir / "consensus.csv", csv);
  }

  const auto& plan = summary.plan;
  if (plan.status != PlanStatus::kNotRun) {
    if (out.map && plan.planning_map) {
      std::ostringstream pgm;
      planning::write_pgm(*plan.planning_map, pgm);
      write_file(dir / "map.pgm", pgm.str());
      std::ostringstream raw;
      planning::write_pgm(*plan.filtered_map, raw);
      write_file(dir / "map_filtered.pgm", raw.str());
      std::ostringstream header;
      planning::write_header(*plan.planning_map, header);
      write_file(dir / "map.txt", header.str());
    }
    if (out.path && plan.status == PlanStatus::kFound) {
      std::string csv = "ix,iy,x,y\n";
      for (const auto& c : plan.path.cells) {
        double x = 0.0;
        double y = 0.0;
        plan.planning_map->cell_center(c, x, y);
        csv += std::to_string(c.x) + "," + std::to_string(c.y) + "," + fmt(x) + "," + fmt(y) + "\n";
      }
      write_file(dir / "path.csv", csv);
    }
  }

  write_file(dir / "summary.txt", format_summary(summary, false));
}

}  // namespace diffswarm::runner
