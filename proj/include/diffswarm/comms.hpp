#pragma once

// Wire format and lossy star-network channel.
//
// Frame layout (bytes):
//   [0xAA][0x55][len:u8][payload: len bytes][crc_hi][crc_lo]
// The CRC is CRC-16/CCITT-FALSE over len || payload. Payload fields are
// little-endian.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string_view>
#include <vector>

#include "diffswarm/random.hpp"

namespace diffswarm::comms {

using Bytes = std::vector<std::uint8_t>;
using TimeUs = std::int64_t;

inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;
inline constexpr std::size_t kFrameOverhead = 5;  // sync(2) + len(1) + crc(2)

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
std::uint16_t crc16(std::span<const std::uint8_t> data);
std::uint16_t crc16(std::string_view text);

inline constexpr std::uint16_t kIrOutOfRange = 0xFFFF;
// id u8, t_sent u32, five i16 fields, ir[5] u16, then one reserved zero byte.
inline constexpr std::size_t kSensorPayloadSize = 26;

struct SensorPacket {
  std::uint8_t robot_id = 0;
  std::uint32_t t_sent = 0;        // ms
  std::int16_t ticks_left = 0;     // cumulative, wraps mod 2^16
  std::int16_t ticks_right = 0;
  std::int16_t flow_dx_left = 0;   // cumulative, 0.1 mm units, wraps
  std::int16_t flow_dx_right = 0;
  std::int16_t gyro_heading = 0;   // mrad in (-3142, 3142]
  std::array<std::uint16_t, 5> ir{kIrOutOfRange, kIrOutOfRange, kIrOutOfRange,
                                  kIrOutOfRange, kIrOutOfRange};

  friend bool operator==(const SensorPacket&, const SensorPacket&) = default;
};

/// Heading in rad to the wire's wrapped milliradians.
std::int16_t quantize_heading(double theta);
double heading_from_wire(std::int16_t mrad);
/// Keeps the low 16 bits of a running counter as a two's complement i16.
std::int16_t wrap_counter(std::int64_t value);
/// IR range in mm to the wire (0xFFFF for out of range, saturated below).
std::uint16_t quantize_ir(std::optional<double> range_mm);

/// Target heading sent from the server to one robot during consensus.
struct HeadingCommand {
  std::uint8_t robot_id = 0;
  std::uint32_t t_sent = 0;            // ms
  std::int32_t target_heading = 0;     // micro-radians, unwrapped

  friend bool operator==(const HeadingCommand&, const HeadingCommand&) = default;
};
inline constexpr std::size_t kCommandPayloadSize = 9;

Bytes encode_payload(const SensorPacket& p);
Bytes encode_payload(const HeadingCommand& c);

/// Wraps an arbitrary payload (at most 255 bytes) in a frame.
Bytes encode_frame(std::span<const std::uint8_t> payload);
Bytes encode_frame(const SensorPacket& p);
Bytes encode_frame(const HeadingCommand& c);

enum class DecodeError {
  kNone,
  kBadSync,
  kTruncated,
  kBadLength,    // length byte disagrees with the buffer or the payload type
  kCrcMismatch,
  kBadPayload,   // CRC-valid but a field is out of its domain
};

std::string_view to_string(DecodeError e);

struct FrameView {
  DecodeError error = DecodeError::kNone;
  Bytes payload;
};

/// Validates sync, length and CRC of exactly one frame.
FrameView decode_frame_payload(std::span<const std::uint8_t> bytes);

struct DecodedPacket {
  DecodeError error = DecodeError::kNone;
  std::optional<SensorPacket> packet;
};
DecodedPacket decode_frame(std::span<const std::uint8_t> bytes);

struct DecodedCommand {
  DecodeError error = DecodeError::kNone;
  std::optional<HeadingCommand> command;
};
DecodedCommand decode_command_frame(std::span<const std::uint8_t> bytes);

/// Per-cause rejection counters.
struct DecodeStats {
  std::uint64_t accepted = 0;
  std::uint64_t bad_sync = 0;
  std::uint64_t truncated = 0;
  std::uint64_t bad_length = 0;
  std::uint64_t crc_mismatch = 0;
  std::uint64_t bad_payload = 0;

  void count(DecodeError e);
  std::uint64_t rejected() const {
    return bad_sync + truncated + bad_length + crc_mismatch + bad_payload;
  }
};

struct ChannelModel {
  double latency_min_ms = 50.0;
  double latency_max_ms = 100.0;
  double loss_prob = 0.0;
  double bit_flip_prob = 0.0;

  void validate() const;
  static ChannelModel ideal() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct Delivery {
  TimeUs deliver_at = 0;
  TimeUs sent_at = 0;
  std::uint8_t robot_id = 0;
  std::uint64_t seq = 0;
  Bytes bytes;
};

/// Draw order is fixed: loss, then per-bit flips (only when
/// bit_flip_prob > 0), then latency. Returns nullopt when dropped.
std::optional<Delivery> channel_send(Bytes frame, TimeUs t_now, const ChannelModel& model,
                                     Rng& rng, std::uint8_t robot_id = 0, std::uint64_t seq = 0);

/// Discrete-event queue of in-flight frames ordered by delivery time, then
/// robot id, then send sequence.
class EventChannel {
 public:
  explicit EventChannel(ChannelModel model) : model_(model) { model_.validate(); }

  /// Returns false if the frame was dropped.
  bool send(Bytes frame, TimeUs t_now, std::uint8_t robot_id, Rng& rng);
  /// Removes and returns every delivery with deliver_at <= t, in order.
  std::vector<Delivery> deliver_until(TimeUs t);

  const ChannelModel& model() const { return model_; }
  std::uint64_t sent() const { return sent_; }
  std::uint64_t dropped() const { return dropped_; }
  std::size_t in_flight() const { return queue_.size(); }

 private:
  struct Later {
    bool operator()(const Delivery& a, const Delivery& b) const;
  };
  ChannelModel model_;
  std::priority_queue<Delivery, std::vector<Delivery>, Later> queue_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t dropped_ = 0;
};

/// Server-side store of the newest packet per robot, by t_sent.
class FreshnessBuffer {
 public:
  struct Entry {
    SensorPacket packet;
    TimeUs t_received = 0;
  };

  /// Stores the packet if it is newer than the current entry. Returns
  /// whether it was stored.
  bool update(const SensorPacket& packet, TimeUs t_received);
  std::optional<Entry> latest(std::uint8_t robot_id) const;

  std::uint64_t stale_rejected() const { return stale_rejected_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::uint8_t, Entry> entries_;
  std::uint64_t stale_rejected_ = 0;
};

/// FNV-1a 64, used for stream and config digests.
std::uint64_t fnv1a(std::span<const std::uint8_t> data, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace diffswarm::comms
