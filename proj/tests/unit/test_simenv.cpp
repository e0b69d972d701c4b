#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <thread>

#include "epopr/error.hpp"
#include "epopr/metrics.hpp"
#include "epopr/simenv.hpp"
#include "oracles.hpp"

using namespace epopr;

namespace {

Region region(RegionId id, Point p, SensitiveGroup g) {
  Region r;
  r.id = id;
  r.coord = p;
  r.features.assign(kFeatureDim, 0.5);
  r.group = g;
  return r;
}

// Depot at the origin, A one hour east, B two hours east (speed 1 km/h);
// single historical samples make repairs deterministic: A 2 h, B 3 h.
sim::EnvConfig two_region_line() {
  sim::EnvConfig env;
  env.regions = {region(0, {1, 0}, SensitiveGroup::kLow), region(1, {2, 0}, SensitiveGroup::kHigh)};
  env.repair_samples = {{2.0}, {3.0}};
  env.intervals = {{1.5, 2.5}, {2.5, 3.5}};
  env.travel.speed_kmh = 1.0;
  env.depot = {0, 0};
  sim::compute_feature_scale(env);
  return env;
}

sim::Policy follow(std::vector<RegionId> order) {
  return [order](const sim::EpisodeState& st, const std::vector<sim::ActionCandidate>&) {
    return order[st.steps];
  };
}

sim::Policy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(make_rng(seed));
  return [rng](const sim::EpisodeState&, const std::vector<sim::ActionCandidate>& c) {
    return c[uniform_index(*rng, c.size())].region_id;
  };
}

}  // namespace

TEST(Simulator, TwoRegionHandExample) {
  const auto env = two_region_line();
  const auto ab = sim::rollout(env, follow({0, 1}), 1);
  EXPECT_DOUBLE_EQ(ab.outage_by_region[0], 3.0);
  EXPECT_DOUBLE_EQ(ab.outage_by_region[1], 7.0);
  EXPECT_DOUBLE_EQ(ab.reward, -5.0);
  EXPECT_DOUBLE_EQ(ab.makespan, 7.0);
  EXPECT_DOUBLE_EQ(ab.cost, 4.0);

  // B first: 2 h travel + 3 h repair, then back to A (1 h) and its 2 h.
  const auto ba = sim::rollout(env, follow({1, 0}), 1);
  EXPECT_DOUBLE_EQ(ba.outage_by_region[1], 5.0);
  EXPECT_DOUBLE_EQ(ba.outage_by_region[0], 8.0);
  EXPECT_DOUBLE_EQ(ba.makespan, 8.0);
}

TEST(Simulator, RewardAndCostOnlyAtTheEnd) {
  const auto env = two_region_line();
  sim::Episode ep(env, 3);
  const auto r1 = ep.step(0);
  EXPECT_FALSE(r1.done);
  EXPECT_EQ(r1.reward, 0.0);
  EXPECT_EQ(r1.cost, 0.0);
  EXPECT_THROW(ep.outcome(), Error);
  const auto r2 = ep.step(1);
  EXPECT_TRUE(r2.done);
  EXPECT_DOUBLE_EQ(r2.reward, -5.0);
  EXPECT_DOUBLE_EQ(r2.cost, 4.0);
}

TEST(Simulator, StepErrors) {
  const auto env = two_region_line();
  sim::Episode ep(env, 0);
  ep.step(0);
  try {
    ep.step(0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kAlreadyRepaired);
  }
  try {
    ep.step(7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kUnknownRegion);
  }
}

TEST(Simulator, ResetIsDeterministicAndSamplesHistory) {
  Rng rng = make_rng(2);
  const auto env = oracle::random_env(rng, 9, 4);
  sim::Episode a(env, 42), b(env, 42);
  EXPECT_EQ(a.sampled_repairs(), b.sampled_repairs());
  for (std::size_t i = 0; i < env.regions.size(); ++i) {
    const auto& s = env.repair_samples[i];
    EXPECT_NE(std::find(s.begin(), s.end(), a.sampled_repairs()[i]), s.end());
  }
  EXPECT_EQ(a.state().time, 0.0);
  EXPECT_EQ(a.state().position, env.depot);
  EXPECT_EQ(std::count(a.state().repaired.begin(), a.state().repaired.end(), true), 0);

  const auto one = two_region_line();
  EXPECT_EQ(sim::Episode(one, 99).sampled_repairs(), (std::vector<double>{2.0, 3.0}));
}

TEST(Simulator, InvalidConfig) {
  auto env = two_region_line();
  env.repair_samples[1].clear();
  try {
    sim::Episode ep(env, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidConfig);
  }
}

TEST(Simulator, CandidatesAndPruning) {
  Rng rng = make_rng(3);
  auto env = oracle::random_env(rng, 8);
  {
    sim::Episode ep(env, 0);
    EXPECT_EQ(ep.candidates().size(), 8u);
    for (RegionId i = 0; i < 7; ++i) ep.step(i);
    const auto c = ep.candidates();
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0].region_id, 7);
  }
  // Closer than every region: only the nearest survives.
  env.prune_max_km = 1e-3;
  env.depot = {-50, -50};
  sim::Episode ep(env, 0);
  const auto c = ep.candidates();
  ASSERT_EQ(c.size(), 1u);
  RegionId nearest = 0;
  for (const auto& r : env.regions) {
    if (distance_km(r.coord, env.depot) <
        distance_km(env.regions[static_cast<std::size_t>(nearest)].coord, env.depot)) {
      nearest = r.id;
    }
  }
  EXPECT_EQ(c[0].region_id, nearest);
}

TEST(Simulator, CandidatesExposeOnlyIntervals) {
  Rng rng = make_rng(4);
  const auto env = oracle::random_env(rng, 6);
  sim::Episode ep(env, 5);
  ep.step(2);
  for (const auto& c : ep.candidates()) {
    const auto i = static_cast<std::size_t>(c.region_id);
    EXPECT_EQ(c.pi, env.intervals[i]);
    EXPECT_NEAR(c.distance_km, distance_km(env.regions[2].coord, env.regions[i].coord), 1e-12);
    EXPECT_EQ(c.elapsed_h, ep.state().time);
    const auto tok = sim::action_token(c, env.scale);
    EXPECT_EQ(tok.size(), sim::kTokenDim);
  }
}

TEST(Simulator, AccountingMatchesHandFormula) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto env = oracle::random_env(rng, 2 + uniform_index(rng, 9));
    std::vector<sim::StepLog> log;
    const std::uint64_t seed = rng();
    const auto out = sim::rollout(env, random_policy(rng()), seed, &log);
    ASSERT_TRUE(is_permutation_of_ids(out.sequence, env.regions.size()));
    const auto repairs = sim::Episode(env, seed).sampled_repairs();
    const auto hand = oracle::hand_outages(env, out.sequence, repairs);
    for (std::size_t i = 0; i < hand.size(); ++i) {
      EXPECT_NEAR(out.outage_by_region[i], hand[i], 1e-9 * std::max(1.0, hand[i]));
    }
    EXPECT_DOUBLE_EQ(out.makespan, *std::max_element(out.outage_by_region.begin(),
                                                     out.outage_by_region.end()));
    double legs = 0.0;
    for (const auto& s : log) legs += s.travel_h + s.repair_h;
    EXPECT_NEAR(out.makespan, legs, 1e-9);
    const double mean =
        std::accumulate(hand.begin(), hand.end(), 0.0) / static_cast<double>(hand.size());
    EXPECT_NEAR(out.reward, -mean, 1e-9 * mean);
    EXPECT_NEAR(out.cost, oracle::hand_cost(env.regions, out.outage_by_region), 1e-9);
  }
}

TEST(Simulator, AdjacentSwapOnlyMovesLaterRegions) {
  Rng rng = make_rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto env = oracle::random_env(rng, 6);
    std::vector<RegionId> order(6);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t k = uniform_index(rng, 5);
    auto swapped = order;
    std::swap(swapped[k], swapped[k + 1]);
    const std::uint64_t seed = rng();
    const auto a = sim::rollout(env, follow(order), seed);
    const auto b = sim::rollout(env, follow(swapped), seed);
    for (std::size_t pos = 0; pos < k; ++pos) {
      const auto id = static_cast<std::size_t>(order[pos]);
      EXPECT_EQ(a.outage_by_region[id], b.outage_by_region[id]);
    }
    // Everything after the pair shifts by the same travel delta.
    if (k + 2 < order.size()) {
      const auto first = static_cast<std::size_t>(order[k + 2]);
      const double delta = b.outage_by_region[first] - a.outage_by_region[first];
      for (std::size_t pos = k + 2; pos < order.size(); ++pos) {
        const auto id = static_cast<std::size_t>(order[pos]);
        EXPECT_NEAR(b.outage_by_region[id] - a.outage_by_region[id], delta, 1e-9);
      }
    }
  }
}

TEST(Simulator, SingleRegionAndSingleGroup) {
  auto env = two_region_line();
  env.regions.pop_back();
  env.repair_samples.pop_back();
  env.intervals.pop_back();
  sim::compute_feature_scale(env);
  const auto out = sim::rollout(env, follow({0}), 0);
  EXPECT_DOUBLE_EQ(out.outage_by_region[0], 3.0);
  EXPECT_EQ(out.cost, 0.0);
}

TEST(Simulator, ParallelSeedsMatchSerial) {
  Rng rng = make_rng(7);
  const auto env = oracle::random_env(rng, 7);
  std::vector<EpisodeOutcome> serial;
  for (std::uint64_t s = 0; s < 8; ++s) serial.push_back(sim::rollout(env, random_policy(s), s));
  std::vector<EpisodeOutcome> par(8);
  {
    std::vector<std::jthread> pool;
    for (std::uint64_t s = 0; s < 8; ++s) {
      pool.emplace_back([&, s] { par[s] = sim::rollout(env, random_policy(s), s); });
    }
  }
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(par[i].outage_by_region, serial[i].outage_by_region);
    EXPECT_EQ(par[i].sequence, serial[i].sequence);
  }
}

TEST(Simulator, StateFeaturesHaveFixedWidth) {
  Rng rng = make_rng(8);
  const auto env = oracle::random_env(rng, 5);
  sim::Episode ep(env, 0);
  for (RegionId i = 0; i < 5; ++i) {
    const auto f = sim::state_features(ep.state(), env);
    EXPECT_EQ(f.size(), sim::kStateDim);
    for (double v : f) EXPECT_TRUE(std::isfinite(v));
    ep.step(i);
  }
}

TEST(InstanceFile, RoundTrip) {
  Rng rng = make_rng(9);
  const auto env = oracle::random_env(rng, 6);
  const auto path = std::filesystem::temp_directory_path() / "epopr_instance_test.json";
  sim::save_instance(env, path);
  const auto back = sim::load_instance(path);
  EXPECT_EQ(back.regions, env.regions);
  EXPECT_EQ(back.repair_samples, env.repair_samples);
  EXPECT_EQ(back.intervals, env.intervals);
  EXPECT_EQ(back.depot, env.depot);
  EXPECT_EQ(back.travel.speed_kmh, env.travel.speed_kmh);
  std::filesystem::remove(path);
  EXPECT_THROW(sim::load_instance(path), Error);
}

TEST(EpisodeLog, OneJsonLinePerStep) {
  const auto env = two_region_line();
  std::vector<sim::StepLog> log;
  sim::rollout(env, follow({0, 1}), 0, &log);
  std::ostringstream os;
  sim::write_episode_log(os, log, 0);
  const auto text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("\"chosen\""), std::string::npos);
}
