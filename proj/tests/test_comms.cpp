#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include "diffswarm/comms.hpp"
#include "diffswarm/core.hpp"

using namespace diffswarm;
using namespace diffswarm::comms;

namespace {

// Table-driven CRC-16/CCITT-FALSE, written independently of the library.
struct CrcTable {
  std::array<std::uint16_t, 256> t{};
  CrcTable() {
    for (int i = 0; i < 256; ++i) {
      std::uint16_t r = static_cast<std::uint16_t>(i << 8);
      for (int b = 0; b < 8; ++b) r = (r & 0x8000) ? static_cast<std::uint16_t>((r << 1) ^ 0x1021)
                                                   : static_cast<std::uint16_t>(r << 1);
      t[i] = r;
    }
  }
  std::uint16_t operator()(const std::uint8_t* p, std::size_t n) const {
    std::uint16_t crc = 0xFFFF;
    for (std::size_t i = 0; i < n; ++i) {
      crc = static_cast<std::uint16_t>((crc << 8) ^ t[((crc >> 8) ^ p[i]) & 0xFF]);
    }
    return crc;
  }
};

SensorPacket random_packet(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> i16(-32768, 32767), u16(0, 65535), gyro(-3141, 3142),
      u8(0, 255);
  std::uniform_int_distribution<std::uint32_t> u32;
  SensorPacket p;
  p.robot_id = static_cast<std::uint8_t>(u8(gen));
  p.t_sent = u32(gen);
  p.ticks_left = static_cast<std::int16_t>(i16(gen));
  p.ticks_right = static_cast<std::int16_t>(i16(gen));
  p.flow_dx_left = static_cast<std::int16_t>(i16(gen));
  p.flow_dx_right = static_cast<std::int16_t>(i16(gen));
  p.gyro_heading = static_cast<std::int16_t>(gyro(gen));
  for (auto& r : p.ir) r = static_cast<std::uint16_t>(u16(gen));
  return p;
}

Bytes frame_of_size(std::size_t total) {
  Bytes payload(total - kFrameOverhead);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i * 37 + 11);
  return encode_frame(payload);
}

}  // namespace

TEST_CASE("crc16 check values") {
  CHECK(crc16(std::string_view{}) == 0xFFFF);
  CHECK(crc16("123456789") == 0x29B1);
  const CrcTable oracle;
  const std::string s = "123456789";
  CHECK(oracle(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()) == 0x29B1);

  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> byte(0, 255), len(0, 300);
  for (int i = 0; i < 2000; ++i) {
    Bytes b(static_cast<std::size_t>(len(gen)));
    for (auto& x : b) x = static_cast<std::uint8_t>(byte(gen));
    CHECK(crc16(b) == oracle(b.data(), b.size()));
  }
}

TEST_CASE("crc16 changes under every single-bit flip of a 32-byte message") {
  Bytes msg(32);
  for (std::size_t i = 0; i < msg.size(); ++i) msg[i] = static_cast<std::uint8_t>(i * 7 + 3);
  const std::uint16_t base = crc16(msg);
  for (int bit = 0; bit < 256; ++bit) {
    Bytes m = msg;
    m[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CHECK(crc16(m) != base);
  }
}

TEST_CASE("frame layout is bit exact") {
  SensorPacket p;
  p.robot_id = 3;
  p.t_sent = 0x01020304;
  p.ticks_left = -2;
  p.gyro_heading = 1571;
  const Bytes f = encode_frame(p);
  REQUIRE(f.size() == kSensorPayloadSize + kFrameOverhead);
  CHECK(f[0] == 0xAA);
  CHECK(f[1] == 0x55);
  CHECK(f[2] == kSensorPayloadSize);
  CHECK(f[3] == 3);
  CHECK(f[4] == 0x04);  // little-endian t_sent
  CHECK(f[7] == 0x01);
  CHECK(f[8] == 0xFE);
  CHECK(f[9] == 0xFF);
  CHECK(f[3 + kSensorPayloadSize - 1] == 0);  // reserved
  const std::uint16_t crc = crc16(std::span<const std::uint8_t>(f.data() + 2, kSensorPayloadSize + 1));
  CHECK(f[f.size() - 2] == (crc >> 8));
  CHECK(f[f.size() - 1] == (crc & 0xFF));
}

TEST_CASE("codec round trip on random packets") {
  std::mt19937_64 gen(7);
  for (int i = 0; i < 100000; ++i) {
    const SensorPacket p = random_packet(gen);
    const DecodedPacket d = decode_frame(encode_frame(p));
    REQUIRE(d.error == DecodeError::kNone);
    REQUIRE(*d.packet == p);
  }
  HeadingCommand c{4, 1234, -1570796};
  const DecodedCommand dc = decode_command_frame(encode_frame(c));
  CHECK(dc.error == DecodeError::kNone);
  CHECK(*dc.command == c);
}

TEST_CASE("decode rejection causes") {
  SensorPacket p;
  p.robot_id = 1;
  const Bytes f = encode_frame(p);

  Bytes flipped = f;
  flipped[3] ^= 0x08;  // payload bit 3
  CHECK(decode_frame(flipped).error == DecodeError::kCrcMismatch);

  Bytes shorter(f.begin(), f.end() - 1);
  CHECK(decode_frame(shorter).error == DecodeError::kTruncated);

  Bytes longer = f;
  longer.push_back(0);
  CHECK(decode_frame(longer).error == DecodeError::kBadLength);

  Bytes sync = f;
  sync[0] = 0xAB;
  CHECK(decode_frame(sync).error == DecodeError::kBadSync);

  CHECK(decode_frame(Bytes{}).error == DecodeError::kTruncated);

  // CRC-valid command frame where a sensor frame is expected.
  CHECK(decode_frame(encode_frame(HeadingCommand{})).error == DecodeError::kBadLength);

  Bytes payload = encode_payload(p);
  payload.back() = 1;
  CHECK(decode_frame(encode_frame(payload)).error == DecodeError::kBadPayload);
  payload = encode_payload(p);
  payload[13] = 0xFF;  // gyro low byte
  payload[14] = 0x7F;  // gyro = 32767 mrad
  CHECK(decode_frame(encode_frame(payload)).error == DecodeError::kBadPayload);

  DecodeStats stats;
  stats.count(DecodeError::kNone);
  stats.count(DecodeError::kCrcMismatch);
  stats.count(DecodeError::kBadSync);
  CHECK(stats.accepted == 1);
  CHECK(stats.rejected() == 2);
}

TEST_CASE("all single-bit corruptions of a 32-byte frame are rejected") {
  const Bytes f = frame_of_size(32);
  for (std::size_t bit = 0; bit < f.size() * 8; ++bit) {
    Bytes m = f;
    m[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CHECK(decode_frame_payload(m).error != DecodeError::kNone);
  }
}

TEST_CASE("random two-bit corruptions of a 32-byte frame are rejected") {
  const Bytes f = frame_of_size(32);
  std::mt19937_64 gen(13);
  std::uniform_int_distribution<std::size_t> pick(0, f.size() * 8 - 1);
  for (int i = 0; i < 100000; ++i) {
    const std::size_t a = pick(gen);
    std::size_t b = pick(gen);
    while (b == a) b = pick(gen);
    Bytes m = f;
    m[a / 8] ^= static_cast<std::uint8_t>(1u << (a % 8));
    m[b / 8] ^= static_cast<std::uint8_t>(1u << (b % 8));
    REQUIRE(decode_frame_payload(m).error != DecodeError::kNone);
  }
}

TEST_CASE("heavy bit flipping on a 40-byte frame is almost always rejected") {
  const Bytes f = frame_of_size(40);
  ChannelModel m{0, 0, 0, 0.5};
  Rng rng(5);
  int accepted = 0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    const auto d = channel_send(f, 0, m, rng);
    REQUIRE(d.has_value());
    const FrameView v = decode_frame_payload(d->bytes);
    if (v.error == DecodeError::kNone && d->bytes != f) ++accepted;
  }
  CHECK(1.0 - static_cast<double>(accepted) / trials >= 0.9999);
}

TEST_CASE("quantization helpers") {
  CHECK(quantize_heading(kPi) == 3142);
  CHECK(quantize_heading(-kPi) == 3142);
  CHECK(quantize_heading(-3.1415) == 3142);
  CHECK(quantize_heading(-3.141) == -3141);
  CHECK(heading_from_wire(1571) == doctest::Approx(1.571));
  CHECK(wrap_counter(32768) == -32768);
  CHECK(wrap_counter(65537) == 1);
  CHECK(wrap_counter(-1) == -1);
  CHECK(quantize_ir(std::nullopt) == kIrOutOfRange);
  CHECK(quantize_ir(499.6) == 500);
  CHECK(quantize_ir(-3.0) == 0);
  CHECK(quantize_ir(1e9) == kIrOutOfRange - 1);
}

TEST_CASE("channel loss and latency") {
  const Bytes f = frame_of_size(31);
  Rng rng(9);
  ChannelModel lossy{50, 100, 1.0, 0};
  for (int i = 0; i < 100; ++i) CHECK_FALSE(channel_send(f, 0, lossy, rng).has_value());

  ChannelModel m{50, 100, 0, 0};
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto d = channel_send(f, 1000, m, rng);
    REQUIRE(d.has_value());
    const double delay_ms = static_cast<double>(d->deliver_at - 1000) / 1000.0;
    CHECK(delay_ms >= 50.0);
    CHECK(delay_ms <= 100.0);
    CHECK(d->bytes == f);
    sum += delay_ms;
  }
  CHECK(std::abs(sum / n - 75.0) < 2.0);

  const double p = 0.05;
  ChannelModel drop{0, 0, p, 0};
  int delivered = 0;
  for (int i = 0; i < n; ++i) delivered += channel_send(f, 0, drop, rng).has_value() ? 1 : 0;
  const double sigma = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(delivered - n * (1 - p)) < 3 * sigma);

  CHECK_THROWS_AS((ChannelModel{100, 50, 0, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ChannelModel{0, 0, 1.5, 0}.validate()), std::invalid_argument);
}

TEST_CASE("event channel delivers in time order with deterministic ties") {
  EventChannel ch(ChannelModel{20, 120, 0, 0});
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    ch.send(frame_of_size(31), i * 10000, static_cast<std::uint8_t>(i % 3), rng);
  }
  CHECK(ch.sent() == 200);
  CHECK(ch.in_flight() == 200);
  const auto all = ch.deliver_until(10'000'000);
  REQUIRE(all.size() == 200);
  bool reordered = false;
  for (std::size_t i = 1; i < all.size(); ++i) {
    CHECK(all[i - 1].deliver_at <= all[i].deliver_at);
    if (all[i].sent_at < all[i - 1].sent_at) reordered = true;
  }
  CHECK(reordered);

  EventChannel ties(ChannelModel::ideal());
  ties.send(frame_of_size(31), 0, 2, rng);
  ties.send(frame_of_size(31), 0, 1, rng);
  ties.send(frame_of_size(31), 0, 1, rng);
  const auto out = ties.deliver_until(0);
  REQUIRE(out.size() == 3);
  CHECK(out[0].robot_id == 1);
  CHECK(out[1].robot_id == 1);
  CHECK(out[0].seq < out[1].seq);
  CHECK(out[2].robot_id == 2);
}

TEST_CASE("freshness buffer examples") {
  FreshnessBuffer buf;
  CHECK_FALSE(buf.latest(1).has_value());
  SensorPacket a;
  a.robot_id = 1;
  a.t_sent = 100;
  SensorPacket b = a;
  b.t_sent = 90;
  SensorPacket c = a;
  c.t_sent = 150;
  CHECK(buf.update(a, 1000));
  CHECK_FALSE(buf.update(b, 1100));
  CHECK(buf.latest(1)->packet.t_sent == 100);
  CHECK(buf.stale_rejected() == 1);
  CHECK(buf.update(c, 1200));
  CHECK(buf.latest(1)->packet.t_sent == 150);
  CHECK(buf.latest(1)->t_received == 1200);
  CHECK_FALSE(buf.latest(7).has_value());
}

TEST_CASE("freshness buffer never goes backwards") {
  FreshnessBuffer buf;
  std::mt19937_64 gen(21);
  std::uniform_int_distribution<std::uint32_t> t(0, 10000);
  std::uniform_int_distribution<int> id(0, 3);
  std::array<std::uint32_t, 4> seen{};
  std::array<bool, 4> any{};
  for (int i = 0; i < 10000; ++i) {
    SensorPacket p;
    p.robot_id = static_cast<std::uint8_t>(id(gen));
    p.t_sent = t(gen);
    buf.update(p, i);
    const auto e = buf.latest(p.robot_id);
    REQUIRE(e.has_value());
    if (any[p.robot_id]) CHECK(e->packet.t_sent >= seen[p.robot_id]);
    seen[p.robot_id] = e->packet.t_sent;
    any[p.robot_id] = true;
  }
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a({}) == 0xcbf29ce484222325ULL);
  const std::string a = "a";
  CHECK(fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(a.data()), 1)) ==
        0xaf63dc4c8601ec8cULL);
}
