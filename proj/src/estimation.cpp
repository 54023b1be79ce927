#include "diffswarm/estimation.hpp"

#include <cmath>
#include <string>

namespace diffswarm::estimation {
namespace {

double counter_delta(std::int16_t curr, std::int16_t prev) {
  return static_cast<double>(static_cast<std::int16_t>(
      static_cast<std::uint16_t>(static_cast<std::uint16_t>(curr) - static_cast<std::uint16_t>(prev))));
}

bool is_symmetric_psd(const Mat5& m) {
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Mat5> eig(m);
  return eig.eigenvalues().minCoeff() >= -1e-9 * scale;
}

}  // namespace

EkfConfig EkfConfig::defaults() {
  EkfConfig c;
  // Loose on (v, w) so the filter follows each interval's measured velocity.
  c.process_noise = Vec5(1.0, 1.0, 1e-4, 1e3, 1.0).asDiagonal();
  // Encoder and flow velocity variances follow the default sensor noise and
  // quantization at a 70 ms packet period; the heading variance matches a
  // 5 mrad gyro.
  c.measurement_noise = Vec5(10.0, 2e-3, 1.5, 1e-3, 2.5e-5).asDiagonal();
  return c;
}

void EkfConfig::validate() const {
  if (!is_symmetric_psd(process_noise)) {
    throw std::invalid_argument("ekf: process noise must be symmetric PSD");
  }
  if (!is_symmetric_psd(measurement_noise)) {
    throw std::invalid_argument("ekf: measurement noise must be symmetric PSD");
  }
  if (!(slip_threshold > 0.0)) throw std::invalid_argument("ekf: slip_threshold must be > 0");
  if (!(slip_inflation >= 1.0)) throw std::invalid_argument("ekf: slip_inflation must be >= 1");
  if (slip_window < 1) throw std::invalid_argument("ekf: slip_window must be >= 1");
}

VelocityMeasurement measurement_from_packets(const comms::SensorPacket& prev,
                                             const comms::SensorPacket& curr,
                                             const RobotGeometry& geom,
                                             std::optional<double> fixed_dt) {
  if (curr.t_sent <= prev.t_sent) {
    throw StaleData("packet timestamp " + std::to_string(curr.t_sent) +
                    " does not advance past " + std::to_string(prev.t_sent));
  }
  VelocityMeasurement m;
  m.dt = fixed_dt ? *fixed_dt : static_cast<double>(curr.t_sent - prev.t_sent) / 1000.0;

  const double d_right = counter_delta(curr.ticks_right, prev.ticks_right) * geom.mm_per_tick;
  const double d_left = counter_delta(curr.ticks_left, prev.ticks_left) * geom.mm_per_tick;
  m.v_enc = (d_right + d_left) / (2.0 * m.dt);
  m.w_enc = (d_right - d_left) / (geom.wheel_base * m.dt);

  const double f_right = counter_delta(curr.flow_dx_right, prev.flow_dx_right) * 0.1;
  const double f_left = counter_delta(curr.flow_dx_left, prev.flow_dx_left) * 0.1;
  m.v_flow = (f_left + f_right) / (2.0 * m.dt);
  m.w_flow = (f_right - f_left) / (geom.flow_sensor_separation * m.dt);

  m.theta_gyro = comms::heading_from_wire(curr.gyro_heading);
  return m;
}

Vec5 transition(const Vec5& mean, double dt) {
  const double mid = mean(kTheta) + 0.5 * mean(kW) * dt;
  Vec5 next = mean;
  next(kX) += mean(kV) * dt * std::cos(mid);
  next(kY) += mean(kV) * dt * std::sin(mid);
  next(kTheta) += mean(kW) * dt;
  return next;
}

Mat5 transition_jacobian(const Vec5& mean, double dt) {
  const double mid = mean(kTheta) + 0.5 * mean(kW) * dt;
  const double c = std::cos(mid);
  const double s = std::sin(mid);
  const double v = mean(kV);
  Mat5 f = Mat5::Identity();
  f(kX, kTheta) = -v * dt * s;
  f(kX, kV) = dt * c;
  f(kX, kW) = -0.5 * v * dt * dt * s;
  f(kY, kTheta) = v * dt * c;
  f(kY, kV) = dt * s;
  f(kY, kW) = 0.5 * v * dt * dt * c;
  f(kTheta, kW) = dt;
  return f;
}

EkfBelief ekf_predict(const EkfBelief& b, double dt, const EkfConfig& cfg) {
  if (!(dt > 0.0)) {
    throw std::domain_error("ekf_predict: dt must be > 0");
  }
  const Mat5 f = transition_jacobian(b.mean, dt);
  EkfBelief out;
  out.mean = transition(b.mean, dt);
  out.mean(kTheta) = wrap_angle(out.mean(kTheta));
  out.cov = f * b.cov * f.transpose() + cfg.process_noise * dt;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Eigen::Matrix<double, 5, 5> measurement_matrix() {
  Eigen::Matrix<double, 5, 5> h = Eigen::Matrix<double, 5, 5>::Zero();
  h(0, kV) = 1.0;
  h(1, kW) = 1.0;
  h(2, kV) = 1.0;
  h(3, kW) = 1.0;
  h(4, kTheta) = 1.0;
  return h;
}

EkfBelief ekf_update(const EkfBelief& b, const VelocityMeasurement& m, bool slip,
                     const EkfConfig& cfg, MeasurementChannels channels) {
  std::vector<int> rows;
  for (int i = 0; i < 5; ++i) {
    const bool heading = i == 4;
    if ((heading && channels != MeasurementChannels::kVelocities) ||
        (!heading && channels != MeasurementChannels::kHeading)) {
      rows.push_back(i);
    }
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto h_full = measurement_matrix();
  const Vec5 z_full = m.as_vector();

  Mat5 r_full = cfg.measurement_noise;
  if (slip) {
    Vec5 scale = Vec5::Ones();
    scale(0) = scale(1) = std::sqrt(cfg.slip_inflation);
    r_full = scale.asDiagonal() * r_full * scale.asDiagonal();
  }

  Eigen::MatrixXd h(n, 5);
  Eigen::MatrixXd r(n, n);
  Eigen::VectorXd innovation(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    h.row(i) = h_full.row(rows[i]);
    innovation(i) = z_full(rows[i]) - h_full.row(rows[i]).dot(b.mean);
    if (rows[i] == 4) innovation(i) = wrap_angle(innovation(i));
    for (Eigen::Index j = 0; j < n; ++j) r(i, j) = r_full(rows[i], rows[j]);
  }

  const Eigen::MatrixXd s = h * b.cov * h.transpose() + r;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (!s.allFinite() || llt.info() != Eigen::Success) {
    throw EstimationFault("innovation covariance is not invertible");
  }
  const Eigen::MatrixXd gain = llt.solve(h * b.cov.transpose()).transpose();

  EkfBelief out;
  out.mean = b.mean + gain * innovation;
  out.mean(kTheta) = wrap_angle(out.mean(kTheta));
  const Mat5 ikh = Mat5::Identity() - gain * h;
  out.cov = ikh * b.cov * ikh.transpose() + gain * r * gain.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

bool detect_slip(const std::deque<bool>& window, int slip_window) {
  std::size_t above = 0;
  for (bool f : window) above += f ? 1 : 0;
  return 2 * above > static_cast<std::size_t>(slip_window);
}

bool SlipDetector::update(const VelocityMeasurement& m, const EkfConfig& cfg) {
  window_.push_back(std::abs(m.v_enc - m.v_flow) > cfg.slip_threshold);
  while (window_.size() > static_cast<std::size_t>(cfg.slip_window)) window_.pop_front();
  active_ = detect_slip(window_, cfg.slip_window);
  return active_;
}

std::vector<TimedPosture> dead_reckon(const std::vector<comms::SensorPacket>& packets,
                                      DeadReckonSource source, const RobotGeometry& geom,
                                      const Posture& initial) {
  std::vector<TimedPosture> trace;
  if (packets.empty()) return trace;
  trace.push_back({packets.front().t_sent, initial});
  Posture pose = initial;
  for (std::size_t i = 1; i < packets.size(); ++i) {
    const auto m = measurement_from_packets(packets[i - 1], packets[i], geom);
    const Twist t = source == DeadReckonSource::kEncoders ? Twist{m.v_enc, m.w_enc}
                                                          : Twist{m.v_flow, m.w_flow};
    pose = integrate_unicycle(pose, t, m.dt);
    trace.push_back({packets[i].t_sent, pose});
  }
  return trace;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kAdaptive: return "adaptive";
    case Variant::kNonAdaptive: return "non_adaptive";
    case Variant::kFixedDt: return "fixed_dt";
    case Variant::kDeadReckonEncoders: return "dr_encoders";
    case Variant::kDeadReckonFlow: return "dr_flow";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : {Variant::kAdaptive, Variant::kNonAdaptive, Variant::kFixedDt,
                    Variant::kDeadReckonEncoders, Variant::kDeadReckonFlow}) {
    if (to_string(v) == name) return v;
  }
  return std::nullopt;
}

Estimator::Estimator(Variant variant, const EkfConfig& cfg, const RobotGeometry& geom,
                     const Posture& initial, const Vec5& initial_cov_diag,
                     double nominal_period_s)
    : variant_(variant), cfg_(cfg), geom_(geom), nominal_period_(nominal_period_s) {
  cfg_.validate();
  if (variant_ == Variant::kNonAdaptive) cfg_.slip_inflation = 1.0;
  belief_.mean << initial.x, initial.y, initial.theta, 0.0, 0.0;
  belief_.cov = initial_cov_diag.asDiagonal();
  if (variant_ == Variant::kDeadReckonEncoders || variant_ == Variant::kDeadReckonFlow) {
    belief_.cov.setZero();
  }
}

std::optional<EstimateRecord> Estimator::process(const comms::SensorPacket& packet) {
  if (last_ && packet.t_sent <= last_->t_sent) {
    ++stale_;
    return std::nullopt;
  }
  const auto bytes = comms::encode_payload(packet);
  digest_ = comms::fnv1a(bytes, digest_);
  if (!last_) {
    last_ = packet;
    return std::nullopt;
  }
  const std::optional<double> fixed =
      variant_ == Variant::kFixedDt ? std::optional<double>(nominal_period_) : std::nullopt;
  const auto m = measurement_from_packets(*last_, packet, geom_, fixed);
  last_ = packet;

  EstimateRecord rec;
  rec.t_ms = packet.t_sent;
  switch (variant_) {
    case Variant::kDeadReckonEncoders:
    case Variant::kDeadReckonFlow: {
      const bool enc = variant_ == Variant::kDeadReckonEncoders;
      const Twist t = enc ? Twist{m.v_enc, m.w_enc} : Twist{m.v_flow, m.w_flow};
      const Posture p = integrate_unicycle(belief_.pose(), t, m.dt);
      belief_.mean << p.x, p.y, p.theta, t.v, t.w;
      rec.slip = detector_.update(m, cfg_);
      break;
    }
    default: {
      // Velocities are averages over the interval just ended, so they
      // inform the motion across it; the gyro heading belongs to its end.
      const bool slip = detector_.update(m, cfg_);
      belief_ = ekf_update(belief_, m, slip, cfg_, MeasurementChannels::kVelocities);
      belief_ = ekf_predict(belief_, m.dt, cfg_);
      belief_ = ekf_update(belief_, m, slip, cfg_, MeasurementChannels::kHeading);
      rec.slip = slip;
      break;
    }
  }
  if (rec.slip) ++slip_steps_;
  rec.belief = belief_;
  return rec;
}

}  // namespace diffswarm::estimation
