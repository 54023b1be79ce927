#pragma once

#include <cstdint>
#include <random>

namespace diffswarm {

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Named sub-streams. Each (seed, owner, stream) triple gets its own
/// generator so that adding a robot or a sensor never shifts another
/// consumer's draws.
enum class Stream : std::uint64_t {
  kEncoder = 1,
  kFlow = 2,
  kGyro = 3,
  kIr = 4,
  kUplink = 5,
  kDownlink = 6,
  kSendJitter = 7,
  kInitial = 8,
  kScenario = 9,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng derive(std::uint64_t seed, std::uint64_t owner, Stream stream) {
    return Rng(mix64(mix64(seed ^ mix64(owner + 1)) + static_cast<std::uint64_t>(stream)));
  }

  /// N(0, sigma); sigma == 0 returns exactly 0 without consuming a draw.
  double gaussian(double sigma) {
    if (sigma == 0.0) return 0.0;
    return std::normal_distribution<double>(0.0, sigma)(engine_);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return std::bernoulli_distribution(p)(engine_);
  }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace diffswarm
