#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "epopr/error.hpp"
#include "epopr/metrics.hpp"
#include "epopr/random.hpp"
#include "oracles.hpp"

using namespace epopr;
using epopr::metrics::wasserstein1;

namespace {

std::vector<double> random_multiset(Rng& rng, std::size_t max_size) {
  std::vector<double> v(1 + uniform_index(rng, max_size));
  // Small integer support so ties and repeated values are common.
  for (auto& x : v) x = static_cast<double>(uniform_index(rng, 8)) + 0.25 * uniform01(rng);
  return v;
}

}  // namespace

TEST(Wasserstein, KnownValues) {
  EXPECT_DOUBLE_EQ(wasserstein1(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(wasserstein1(std::vector<double>{0}, std::vector<double>{5}), 5.0);
  EXPECT_DOUBLE_EQ(wasserstein1(std::vector<double>{3, 1, 2}, std::vector<double>{2, 1, 3}), 0.0);
}

TEST(Wasserstein, UnequalSizes) {
  // {0, 1} vs {0}: half the mass moves distance 1.
  EXPECT_DOUBLE_EQ(wasserstein1(std::vector<double>{0, 1}, std::vector<double>{0}), 0.5);
  // {0,0,3} vs {1,2}: quantile functions differ by 1 on (0,1/2), 2 on
  // (1/2,2/3) and 1 on (2/3,1).
  EXPECT_NEAR(wasserstein1(std::vector<double>{0, 0, 3}, std::vector<double>{1, 2}),
              0.5 + 2.0 / 6 + 1.0 / 3, 1e-12);
}

TEST(Wasserstein, EmptyInputThrows) {
  std::vector<double> e, a{1};
  try {
    wasserstein1(e, a);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::kEmptyInput);
  }
  EXPECT_THROW(wasserstein1(a, e), Error);
}

TEST(Wasserstein, MatchesTransportOracle) {
  Rng rng = make_rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_multiset(rng, 6), b = random_multiset(rng, 6);
    EXPECT_NEAR(wasserstein1(a, b), oracle::transport_w1(a, b), 1e-9);
  }
}

TEST(Wasserstein, MetricAxiomsAndTranslation) {
  Rng rng = make_rng(12);
  for (int i = 0; i < 300; ++i) {
    auto a = random_multiset(rng, 6), b = random_multiset(rng, 6), c = random_multiset(rng, 6);
    const double ab = wasserstein1(a, b), ba = wasserstein1(b, a);
    EXPECT_GE(ab, 0.0);
    EXPECT_DOUBLE_EQ(ab, ba);
    EXPECT_LE(ab, wasserstein1(a, c) + wasserstein1(c, b) + 1e-12);
    const double shift = 3.0 * uniform01(rng) - 1.5;
    auto as = a, bs = b;
    for (auto& x : as) x += shift;
    for (auto& x : bs) x += shift;
    EXPECT_NEAR(wasserstein1(as, bs), ab, 1e-9);
    EXPECT_LE(std::abs(wasserstein1(a, bs) - ab), std::abs(shift) + 1e-9);
  }
}

TEST(Wasserstein, ZeroOnlyForEqualMultisets) {
  Rng rng = make_rng(13);
  for (int i = 0; i < 200; ++i) {
    auto a = random_multiset(rng, 5);
    auto b = a;
    std::shuffle(b.begin(), b.end(), rng);
    EXPECT_EQ(wasserstein1(a, b), 0.0);
    b[0] += 0.5;
    EXPECT_GT(wasserstein1(a, b), 0.0);
  }
}

TEST(WdInequity, Examples) {
  metrics::GroupedSamples same{{SensitiveGroup::kLow, {1, 2}},
                               {SensitiveGroup::kMiddle, {2, 1}},
                               {SensitiveGroup::kHigh, {1, 2}}};
  EXPECT_EQ(metrics::wd_inequity(same), 0.0);
  metrics::GroupedSamples points{{SensitiveGroup::kLow, {0}},
                                 {SensitiveGroup::kMiddle, {3}},
                                 {SensitiveGroup::kHigh, {10}}};
  EXPECT_DOUBLE_EQ(metrics::wd_inequity(points), 10.0);
  metrics::GroupedSamples one{{SensitiveGroup::kLow, {1}}};
  try {
    metrics::wd_inequity(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kFewerThanTwoGroups);
  }
}

TEST(WdInequity, InvariantToGroupRelabelling) {
  Rng rng = make_rng(14);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::vector<double>> s = {random_multiset(rng, 5), random_multiset(rng, 5),
                                          random_multiset(rng, 5)};
    metrics::GroupedSamples g1{{SensitiveGroup::kLow, s[0]},
                               {SensitiveGroup::kMiddle, s[1]},
                               {SensitiveGroup::kHigh, s[2]}};
    metrics::GroupedSamples g2{{SensitiveGroup::kLow, s[2]},
                               {SensitiveGroup::kMiddle, s[0]},
                               {SensitiveGroup::kHigh, s[1]}};
    EXPECT_DOUBLE_EQ(metrics::wd_inequity(g1), metrics::wd_inequity(g2));
  }
}

TEST(AvgOutage, Examples) {
  EpisodeOutcome o;
  o.outage_by_region = {3, 7};
  std::vector<EpisodeOutcome> one{o}, two{o, o};
  EXPECT_DOUBLE_EQ(metrics::avg_outage(one), 5.0);
  EXPECT_DOUBLE_EQ(metrics::avg_outage(two), 5.0);
  EXPECT_THROW(metrics::avg_outage(std::vector<EpisodeOutcome>{}), Error);
}

TEST(IntervalStats, Lengths) {
  std::map<SensitiveGroup, std::vector<PredictionInterval>> m{
      {SensitiveGroup::kLow, {{2, 5}, {2, 5}}}, {SensitiveGroup::kHigh, {{4, 4}}}};
  const auto s = metrics::interval_stats(m);
  EXPECT_DOUBLE_EQ(s.at(SensitiveGroup::kLow).mean_length, 3.0);
  EXPECT_EQ(s.at(SensitiveGroup::kLow).count, 2u);
  EXPECT_DOUBLE_EQ(s.at(SensitiveGroup::kHigh).mean_length, 0.0);
  m[SensitiveGroup::kMiddle] = {};
  EXPECT_THROW(metrics::interval_stats(m), Error);
}
