#include "diffswarm/comms.hpp"

#include <cmath>
#include <stdexcept>

#include "diffswarm/core.hpp"

namespace diffswarm::comms {
namespace {

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::uint16_t crc16(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t byte : data) {
    crc ^= static_cast<std::uint16_t>(byte) << 8;
    for (int bit = 0; bit < 8; ++bit) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                           : static_cast<std::uint16_t>(crc << 1);
    }
  }
  return crc;
}

std::uint16_t crc16(std::string_view text) {
  return crc16(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::int16_t quantize_heading(double theta) {
  long q = std::lround(wrap_angle(theta) * 1000.0);
  if (q <= -3142) q = 3142;  // -pi and pi are the same heading
  return static_cast<std::int16_t>(q);
}

double heading_from_wire(std::int16_t mrad) { return static_cast<double>(mrad) / 1000.0; }

std::int16_t wrap_counter(std::int64_t value) {
  return static_cast<std::int16_t>(static_cast<std::uint16_t>(value & 0xFFFF));
}

std::uint16_t quantize_ir(std::optional<double> range_mm) {
  if (!range_mm) return kIrOutOfRange;
  const long q = std::lround(*range_mm);
  if (q < 0) return 0;
  if (q >= kIrOutOfRange) return kIrOutOfRange - 1;
  return static_cast<std::uint16_t>(q);
}

Bytes encode_payload(const SensorPacket& p) {
  Bytes out;
  out.reserve(kSensorPayloadSize);
  out.push_back(p.robot_id);
  put_u32(out, p.t_sent);
  for (std::int16_t v : {p.ticks_left, p.ticks_right, p.flow_dx_left, p.flow_dx_right,
                         p.gyro_heading}) {
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  for (std::uint16_t r : p.ir) put_u16(out, r);
  out.push_back(0);  // reserved
  return out;
}

Bytes encode_payload(const HeadingCommand& c) {
  Bytes out;
  out.reserve(kCommandPayloadSize);
  out.push_back(c.robot_id);
  put_u32(out, c.t_sent);
  put_u32(out, static_cast<std::uint32_t>(c.target_heading));
  return out;
}

Bytes encode_frame(std::span<const std::uint8_t> payload) {
  if (payload.size() > 255) {
    throw std::invalid_argument("encode_frame: payload longer than 255 bytes");
  }
  Bytes out;
  out.reserve(payload.size() + kFrameOverhead);
  out.push_back(kSync0);
  out.push_back(kSync1);
  out.push_back(static_cast<std::uint8_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  const std::uint16_t crc = crc16(std::span(out).subspan(2));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  return out;
}

Bytes encode_frame(const SensorPacket& p) { return encode_frame(encode_payload(p)); }
Bytes encode_frame(const HeadingCommand& c) { return encode_frame(encode_payload(c)); }

std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::kNone: return "ok";
    case DecodeError::kBadSync: return "bad_sync";
    case DecodeError::kTruncated: return "truncated";
    case DecodeError::kBadLength: return "bad_length";
    case DecodeError::kCrcMismatch: return "crc_mismatch";
    case DecodeError::kBadPayload: return "bad_payload";
  }
  return "unknown";
}

FrameView decode_frame_payload(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 1 && bytes[0] != kSync0) return {DecodeError::kBadSync, {}};
  if (bytes.size() >= 2 && bytes[1] != kSync1) return {DecodeError::kBadSync, {}};
  if (bytes.size() < 3) return {DecodeError::kTruncated, {}};
  const std::size_t len = bytes[2];
  const std::size_t expected = len + kFrameOverhead;
  if (bytes.size() < expected) return {DecodeError::kTruncated, {}};
  if (bytes.size() > expected) return {DecodeError::kBadLength, {}};
  const std::uint16_t wire_crc =
      static_cast<std::uint16_t>((bytes[3 + len] << 8) | bytes[4 + len]);
  if (crc16(bytes.subspan(2, len + 1)) != wire_crc) return {DecodeError::kCrcMismatch, {}};
  const auto payload = bytes.subspan(3, len);
  return {DecodeError::kNone, Bytes(payload.begin(), payload.end())};
}

DecodedPacket decode_frame(std::span<const std::uint8_t> bytes) {
  FrameView view = decode_frame_payload(bytes);
  if (view.error != DecodeError::kNone) return {view.error, std::nullopt};
  const auto& b = view.payload;
  if (b.size() != kSensorPayloadSize) return {DecodeError::kBadLength, std::nullopt};
  const std::span<const std::uint8_t> s(b);
  SensorPacket p;
  p.robot_id = s[0];
  p.t_sent = get_u32(s, 1);
  p.ticks_left = static_cast<std::int16_t>(get_u16(s, 5));
  p.ticks_right = static_cast<std::int16_t>(get_u16(s, 7));
  p.flow_dx_left = static_cast<std::int16_t>(get_u16(s, 9));
  p.flow_dx_right = static_cast<std::int16_t>(get_u16(s, 11));
  p.gyro_heading = static_cast<std::int16_t>(get_u16(s, 13));
  for (std::size_t i = 0; i < p.ir.size(); ++i) p.ir[i] = get_u16(s, 15 + 2 * i);
  if (s[kSensorPayloadSize - 1] != 0 || p.gyro_heading <= -3142 || p.gyro_heading > 3142) {
    return {DecodeError::kBadPayload, std::nullopt};
  }
  return {DecodeError::kNone, p};
}

DecodedCommand decode_command_frame(std::span<const std::uint8_t> bytes) {
  FrameView view = decode_frame_payload(bytes);
  if (view.error != DecodeError::kNone) return {view.error, std::nullopt};
  if (view.payload.size() != kCommandPayloadSize) return {DecodeError::kBadLength, std::nullopt};
  const std::span<const std::uint8_t> s(view.payload);
  HeadingCommand c;
  c.robot_id = s[0];
  c.t_sent = get_u32(s, 1);
  c.target_heading = static_cast<std::int32_t>(get_u32(s, 5));
  return {DecodeError::kNone, c};
}

void DecodeStats::count(DecodeError e) {
  switch (e) {
    case DecodeError::kNone: ++accepted; break;
    case DecodeError::kBadSync: ++bad_sync; break;
    case DecodeError::kTruncated: ++truncated; break;
    case DecodeError::kBadLength: ++bad_length; break;
    case DecodeError::kCrcMismatch: ++crc_mismatch; break;
    case DecodeError::kBadPayload: ++bad_payload; break;
  }
}

void ChannelModel::validate() const {
  if (!(latency_min_ms >= 0.0 && latency_min_ms <= latency_max_ms)) {
    throw std::invalid_argument("channel: need 0 <= latency_min_ms <= latency_max_ms");
  }
  if (!(loss_prob >= 0.0 && loss_prob <= 1.0)) {
    throw std::invalid_argument("channel: loss_prob must be in [0, 1]");
  }
  if (!(bit_flip_prob >= 0.0 && bit_flip_prob <= 1.0)) {
    throw std::invalid_argument("channel: bit_flip_prob must be in [0, 1]");
  }
}

std::optional<Delivery> channel_send(Bytes frame, TimeUs t_now, const ChannelModel& model,
                                     Rng& rng, std::uint8_t robot_id, std::uint64_t seq) {
  if (rng.bernoulli(model.loss_prob)) return std::nullopt;
  if (model.bit_flip_prob > 0.0) {
    for (auto& byte : frame) {
      for (int bit = 0; bit < 8; ++bit) {
        if (rng.bernoulli(model.bit_flip_prob)) byte ^= static_cast<std::uint8_t>(1u << bit);
      }
    }
  }
  double latency_ms = model.latency_min_ms;
  if (model.latency_max_ms > model.latency_min_ms) {
    latency_ms = rng.uniform(model.latency_min_ms, model.latency_max_ms);
  }
  Delivery d;
  d.sent_at = t_now;
  d.deliver_at = t_now + std::llround(latency_ms * 1000.0);
  d.robot_id = robot_id;
  d.seq = seq;
  d.bytes = std::move(frame);
  return d;
}

bool EventChannel::Later::operator()(const Delivery& a, const Delivery& b) const {
  if (a.deliver_at != b.deliver_at) return a.deliver_at > b.deliver_at;
  if (a.robot_id != b.robot_id) return a.robot_id > b.robot_id;
  return a.seq > b.seq;
}

bool EventChannel::send(Bytes frame, TimeUs t_now, std::uint8_t robot_id, Rng& rng) {
  ++sent_;
  auto d = channel_send(std::move(frame), t_now, model_, rng, robot_id, next_seq_++);
  if (!d) {
    ++dropped_;
    return false;
  }
  queue_.push(std::move(*d));
  return true;
}

std::vector<Delivery> EventChannel::deliver_until(TimeUs t) {
  std::vector<Delivery> out;
  while (!queue_.empty() && queue_.top().deliver_at <= t) {
    out.push_back(queue_.top());
    queue_.pop();
  }
  return out;
}

bool FreshnessBuffer::update(const SensorPacket& packet, TimeUs t_received) {
  auto it = entries_.find(packet.robot_id);
  if (it != entries_.end() && packet.t_sent <= it->second.packet.t_sent) {
    ++stale_rejected_;
    return false;
  }
  entries_[packet.robot_id] = Entry{packet, t_received};
  return true;
}

std::optional<FreshnessBuffer::Entry> FreshnessBuffer::latest(std::uint8_t robot_id) const {
  auto it = entries_.find(robot_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> data, std::uint64_t h) {
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace diffswarm::comms
