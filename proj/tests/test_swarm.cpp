#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "diffswarm/swarm.hpp"

using namespace diffswarm;
using namespace diffswarm::swarm;

namespace {

std::vector<sim::RobotSetup> robots_at(const std::vector<double>& headings, double gyro_sigma) {
  std::vector<sim::RobotSetup> out;
  for (std::size_t i = 0; i < headings.size(); ++i) {
    sim::RobotSetup s;
    s.id = static_cast<std::uint8_t>(i + 1);
    s.initial = Posture(400.0 * static_cast<double>(i), 0.0, headings[i]);
    s.noise.gyro_sigma = gyro_sigma;
    out.push_back(s);
  }
  return out;
}

std::vector<double> random_headings(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(-kPi / 2, kPi / 2);
  std::vector<double> h(n);
  for (auto& x : h) x = d(gen);
  return h;
}

}  // namespace

TEST_CASE("mean heading examples") {
  CHECK(mean_heading(SwarmState{{0, 1}}) == doctest::Approx(0.5));
  CHECK(mean_heading(SwarmState{{0.7, 0.7, 0.7}}) == doctest::Approx(0.7));
  CHECK(mean_heading(SwarmState{{0.1, 0.2, 0.6}}) == doctest::Approx(0.3));
  CHECK_THROWS_AS(mean_heading(SwarmState{}), std::domain_error);
}

TEST_CASE("consensus step examples") {
  const SwarmState a = consensus_step({{0, 1}}, 0.5);
  CHECK(a.headings[0] == doctest::Approx(0.25));
  CHECK(a.headings[1] == doctest::Approx(0.75));
  CHECK(a.round == 1);
  const SwarmState b = consensus_step({{0, 1}}, 1.0);
  CHECK(b.headings[0] == doctest::Approx(0.5));
  CHECK(b.headings[1] == doctest::Approx(0.5));
  const SwarmState c = consensus_step({{0.4, 0.4, 0.4}}, 0.3);
  CHECK(c.headings == std::vector<double>{0.4, 0.4, 0.4});
}

TEST_CASE("consensus step preserves the mean and contracts every pair") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> h(-1.5, 1.5), k(0.01, 1.99);
  std::uniform_int_distribution<int> n(2, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    SwarmState s;
    s.headings.resize(static_cast<std::size_t>(n(gen)));
    for (auto& x : s.headings) x = h(gen);
    const double gain = k(gen);
    const SwarmState next = consensus_step(s, gain);
    const double m0 = mean_heading(s);
    CHECK(std::abs(mean_heading(next) - m0) <= 1e-12 * std::max(1.0, std::abs(m0)));
    for (std::size_t i = 0; i < s.headings.size(); ++i) {
      for (std::size_t j = i + 1; j < s.headings.size(); ++j) {
        const double before = s.headings[i] - s.headings[j];
        const double after = next.headings[i] - next.headings[j];
        CHECK(std::abs(after - (1 - gain) * before) <= 1e-12 * std::max(1.0, std::abs(before)));
      }
    }
  }
}

TEST_CASE("spread after r rounds is |1-K|^r of the initial spread") {
  for (double gain : {0.2, 0.5, 1.5, 1.9}) {
    SwarmState s{random_headings(6, 12)};
    const double s0 = heading_spread(s.headings);
    for (int r = 1; r <= 50; ++r) {
      s = consensus_step(s, gain);
      const double expected = std::pow(std::abs(1 - gain), r) * s0;
      CHECK(std::abs(heading_spread(s.headings) - expected) <= 1e-12 * std::max(expected, 1e-300) + 1e-15);
    }
  }
}

TEST_CASE("consensus step is the identity only at agreement") {
  const SwarmState same{{0.3, 0.3}};
  CHECK(consensus_step(same, 0.7).headings == same.headings);
  const SwarmState differ{{0.3, 0.31}};
  CHECK(consensus_step(differ, 0.7).headings != differ.headings);
}

TEST_CASE("synchronous run declares after the stable streak") {
  ConsensusConfig cfg;
  cfg.mode = ConsensusMode::kSynchronous;
  const auto res = run_synchronous_consensus({{-1.0, 0.0, 1.0}}, cfg);
  REQUIRE(res.converged);
  // Spread 2 * 0.8^r < 0.01 first at r = 24.
  CHECK(res.converged_round == 24);
  CHECK(res.declared_round == 24 + cfg.stable_rounds - 1);
  CHECK(res.converged_time == doctest::Approx(24 * 0.07));
}

TEST_CASE("config validation") {
  ConsensusConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gain = 2.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.gain = 0.2;
  cfg.epsilon = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("networked: six robots on an ideal channel agree within 10 s") {
  ConsensusConfig cfg;
  const auto res = run_networked_consensus(robots_at(random_headings(6, 3), 0.001),
                                           comms::ChannelModel::ideal(), cfg, {}, {}, 5, 30.0);
  REQUIRE(res.converged);
  CHECK(res.converged_time < 10.0);
  CHECK(heading_spread(res.final_true_headings) < 0.02);
  CHECK(res.uplink.rejected() == 0);
}

TEST_CASE("networked: total loss never converges") {
  ConsensusConfig cfg;
  cfg.max_rounds = 50;
  const comms::ChannelModel dead{0, 0, 1.0, 0};
  const auto res =
      run_networked_consensus(robots_at({-0.5, 0.5}, 0.001), dead, cfg, {}, {}, 1, 30.0);
  CHECK_FALSE(res.converged);
  CHECK(res.rounds == 50);
  CHECK(res.trace.empty());
}

TEST_CASE("networked: equal headings converge at the first check") {
  ConsensusConfig cfg;
  const auto res = run_networked_consensus(robots_at({0.2, 0.2, 0.2}, 0.0),
                                           comms::ChannelModel::ideal(), cfg, {}, {}, 1, 30.0);
  REQUIRE(res.converged);
  REQUIRE_FALSE(res.trace.empty());
  CHECK(res.converged_round == res.trace.front().round);
}

TEST_CASE("networked: stale robots raise warnings") {
  ConsensusConfig cfg;
  cfg.max_rounds = 40;
  cfg.max_rounds = 200;
  // Nine frames in ten lost: gaps past the 500 ms horizon are routine.
  const comms::ChannelModel lossy{0, 0, 0.9, 0};
  const auto res =
      run_networked_consensus(robots_at({-0.5, 0.5}, 0.001), lossy, cfg, {}, {}, 1, 30.0);
  CHECK(res.staleness_warnings > 0);
}

TEST_CASE("networked: default lossy channel converges across gains and sizes") {
  comms::ChannelModel channel;  // 50-100 ms latency
  channel.loss_prob = 0.05;
  for (double gain : {0.15, 0.3, 0.5}) {
    for (std::size_t n : {2u, 6u, 10u}) {
      int ok = 0;
      for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        ConsensusConfig cfg;
        cfg.gain = gain;
        cfg.max_rounds = 1000;
        const auto res = run_networked_consensus(robots_at(random_headings(n, seed), 0.001),
                                                 channel, cfg, {}, {}, seed, 15.0);
        if (res.converged && res.converged_time <= 15.0) ++ok;
      }
      INFO("gain " << gain << " n " << n);
      CHECK(ok == 20);
    }
  }
}

TEST_CASE("networked: K = 0.1 on the default lossy channel converges within its delay bound") {
  // One (1 - K) contraction per command round trip, about 0.3 s, so K = 0.1
  // needs roughly 17 to 21 s rather than 15.
  comms::ChannelModel channel;
  channel.loss_prob = 0.05;
  for (std::size_t n : {2u, 6u, 10u}) {
    int ok = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      ConsensusConfig cfg;
      cfg.gain = 0.1;
      cfg.max_rounds = 1000;
      const auto res = run_networked_consensus(robots_at(random_headings(n, seed), 0.001),
                                               channel, cfg, {}, {}, seed, 30.0);
      if (res.converged && res.converged_time <= 25.0) ++ok;
    }
    INFO("n " << n);
    CHECK(ok == 20);
  }
}
