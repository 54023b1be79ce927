#pragma once

// Extended Kalman filter over (x, y, theta, v, w) fed by encoder, optical
// flow and gyro heading packets, with slip-adaptive measurement noise.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "diffswarm/comms.hpp"
#include "diffswarm/core.hpp"

namespace diffswarm::estimation {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

enum StateIndex : int { kX = 0, kY = 1, kTheta = 2, kV = 3, kW = 4 };

/// Raised when timestamps do not increase between consecutive packets.
class StaleData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the innovation covariance cannot be inverted.
class EstimationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EkfBelief {
  Vec5 mean = Vec5::Zero();
  Mat5 cov = Mat5::Identity();

  Posture pose() const { return {mean(kX), mean(kY), mean(kTheta)}; }
};

struct EkfConfig {
  Mat5 process_noise;       // Q, per second
  Mat5 measurement_noise;   // R_base over (v_enc, w_enc, v_flow, w_flow, theta)
  double slip_threshold = 20.0;  // mm/s
  double slip_inflation = 100.0;
  int slip_window = 5;

  static EkfConfig defaults();
  /// Throws std::invalid_argument.
  void validate() const;
};

struct VelocityMeasurement {
  double v_enc = 0.0;
  double w_enc = 0.0;
  double v_flow = 0.0;
  double w_flow = 0.0;
  double theta_gyro = 0.0;
  double dt = 0.0;  // s

  Vec5 as_vector() const { return {v_enc, w_enc, v_flow, w_flow, theta_gyro}; }
};

/// Velocities from two packets. Counter fields are cumulative and differenced
/// modulo 2^16. dt comes from t_sent unless `fixed_dt` is given. Throws
/// StaleData if curr.t_sent <= prev.t_sent.
VelocityMeasurement measurement_from_packets(const comms::SensorPacket& prev,
                                             const comms::SensorPacket& curr,
                                             const RobotGeometry& geom,
                                             std::optional<double> fixed_dt = std::nullopt);

/// Constant-(v, w) transition. Position advances along the heading at the
/// middle of the step.
Vec5 transition(const Vec5& mean, double dt);

/// Analytic Jacobian of `transition` with respect to the state.
Mat5 transition_jacobian(const Vec5& mean, double dt);

/// mean <- f(mean), cov <- F cov F^T + Q dt. Throws std::domain_error for dt <= 0.
EkfBelief ekf_predict(const EkfBelief& b, double dt, const EkfConfig& cfg);

/// Measurement matrix: z = (v, w, v, w, theta).
Eigen::Matrix<double, 5, 5> measurement_matrix();

enum class MeasurementChannels { kAll, kVelocities, kHeading };

/// Joseph-form update on the selected rows of z. The heading innovation is
/// wrapped; encoder variances are multiplied by slip_inflation when `slip`
/// is set. Throws EstimationFault if the innovation covariance is singular.
EkfBelief ekf_update(const EkfBelief& b, const VelocityMeasurement& m, bool slip,
                     const EkfConfig& cfg,
                     MeasurementChannels channels = MeasurementChannels::kAll);

/// Debounced slip detector: reports slip while |v_enc - v_flow| exceeds the
/// threshold in a strict majority of the last `slip_window` measurements.
class SlipDetector {
 public:
  bool update(const VelocityMeasurement& m, const EkfConfig& cfg);
  bool active() const { return active_; }

 private:
  std::deque<bool> window_;
  bool active_ = false;
};

/// Majority rule over the last `slip_window` threshold flags. A partially
/// filled window counts its missing entries as "no slip".
bool detect_slip(const std::deque<bool>& window, int slip_window);

enum class DeadReckonSource { kEncoders, kFlow };

struct TimedPosture {
  std::uint32_t t_ms = 0;
  Posture pose;
};

/// Open-loop integration of one velocity source through integrate_unicycle.
/// Packets must be in t_sent order; StaleData propagates.
std::vector<TimedPosture> dead_reckon(const std::vector<comms::SensorPacket>& packets,
                                      DeadReckonSource source, const RobotGeometry& geom,
                                      const Posture& initial);

/// Estimator variants compared by the tooling.
enum class Variant {
  kAdaptive,        // timestamp dt, slip inflation on
  kNonAdaptive,     // timestamp dt, inflation forced to 1
  kFixedDt,         // dt hardwired to the nominal packet period
  kDeadReckonEncoders,
  kDeadReckonFlow,
};

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct EstimateRecord {
  std::uint32_t t_ms = 0;
  EkfBelief belief;
  bool slip = false;
};

/// Sequential per-robot estimator: consumes packets in arrival order,
/// skipping (and counting) any whose t_sent does not advance.
class Estimator {
 public:
  Estimator(Variant variant, const EkfConfig& cfg, const RobotGeometry& geom,
            const Posture& initial, const Vec5& initial_cov_diag,
            double nominal_period_s = 0.07);

  /// Returns the new estimate, or nullopt for the first packet and for
  /// stale packets.
  std::optional<EstimateRecord> process(const comms::SensorPacket& packet);

  Variant variant() const { return variant_; }
  const EkfBelief& belief() const { return belief_; }
  std::uint32_t last_t_ms() const { return last_ ? last_->t_sent : 0; }
  bool initialized() const { return last_.has_value(); }
  std::uint64_t stale_count() const { return stale_; }
  std::uint64_t slip_steps() const { return slip_steps_; }
  /// Digest of every packet consumed, for common-random-number checks.
  std::uint64_t stream_digest() const { return digest_; }

 private:
  Variant variant_;
  EkfConfig cfg_;
  RobotGeometry geom_;
  double nominal_period_;
  EkfBelief belief_;
  SlipDetector detector_;
  std::optional<comms::SensorPacket> last_;
  std::uint64_t stale_ = 0;
  std::uint64_t slip_steps_ = 0;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

}  // namespace diffswarm::estimation
