#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "epopr/baselines.hpp"
#include "epopr/error.hpp"
#include "epopr/eval.hpp"
#include "oracles.hpp"

using namespace epopr;
using namespace epopr::eval;

namespace {

sim::EnvConfig deterministic_env() {
  Rng rng = make_rng(1);
  auto env = oracle::random_env(rng, 6, 1);  // one sample per region
  return env;
}

NamedPolicy gm() { return {"GM", shared(baselines::greedy_policy())}; }

}  // namespace

TEST(Evaluate, DeterministicInstanceRepeatsExactly) {
  const auto env = deterministic_env();
  const auto r = evaluate_policy(env, shared(baselines::greedy_policy()), 7, 3);
  ASSERT_EQ(r.outcomes.size(), 7u);
  for (const auto& o : r.outcomes) {
    EXPECT_EQ(o.outage_by_region, r.outcomes[0].outage_by_region);
    EXPECT_EQ(o.cost, r.outcomes[0].cost);
  }
  EXPECT_DOUBLE_EQ(r.avg_outage, -r.outcomes[0].reward);
  EXPECT_DOUBLE_EQ(r.wd_inequity, r.outcomes[0].cost);
  EXPECT_NEAR(r.wd_inequity_pooled, r.outcomes[0].cost, 1e-12);
  EXPECT_EQ(r.samples.size(), 7 * env.regions.size());
}

TEST(Evaluate, SameSequenceSameMetrics) {
  Rng rng = make_rng(2);
  const auto env = oracle::random_env(rng, 8);
  const auto seq = baselines::gt_sequence(env.regions);
  const auto a = evaluate_policy(env, shared(baselines::gt_policy(env.regions)), 20, 5);
  const auto b = evaluate_policy(env, shared(baselines::sequence_policy(seq)), 20, 5);
  EXPECT_EQ(a.avg_outage, b.avg_outage);
  EXPECT_EQ(a.wd_inequity, b.wd_inequity);
}

TEST(Evaluate, ResultsIndependentOfJobs) {
  Rng rng = make_rng(3);
  const auto env = oracle::random_env(rng, 9);
  const auto serial = evaluate_policy(env, shared(baselines::greedy_policy()), 25, 8, 1);
  const auto parallel = evaluate_policy(env, shared(baselines::greedy_policy()), 25, 8, 3);
  EXPECT_EQ(serial.avg_outage, parallel.avg_outage);
  EXPECT_EQ(serial.wd_inequity, parallel.wd_inequity);
  EXPECT_EQ(serial.wd_inequity_pooled, parallel.wd_inequity_pooled);
}

TEST(Compare, SingleSeedHasZeroSpread) {
  Rng rng = make_rng(4);
  const auto env = oracle::random_env(rng, 6);
  const auto row = summarize(env, gm(), 10, {42});
  EXPECT_EQ(row.outage_std, 0.0);
  EXPECT_EQ(row.wd_std, 0.0);
  EXPECT_EQ(row.outage_by_seed.size(), 1u);
}

TEST(Compare, DuplicatedPolicyGivesIdenticalRows) {
  Rng rng = make_rng(5);
  const auto env = oracle::random_env(rng, 7);
  auto twin = gm();
  twin.name = "GM2";
  const auto t = compare(env, {gm(), twin}, 10, {0, 1, 2});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].outage_by_seed, t.rows[1].outage_by_seed);
  EXPECT_EQ(t.rows[0].wd_by_seed, t.rows[1].wd_by_seed);
  EXPECT_EQ(t.rows[0].outage_std, t.rows[1].outage_std);
}

TEST(Compare, RejectsTooFewPoliciesOrSeeds) {
  Rng rng = make_rng(6);
  const auto env = oracle::random_env(rng, 4);
  EXPECT_THROW(compare(env, {}, 5, {0}), Error);
  EXPECT_THROW(compare(env, {gm()}, 5, {0}), Error);
  EXPECT_THROW(compare(env, {gm(), gm()}, 5, {}), Error);
}

TEST(Compare, TableFormatting) {
  ComparisonTable t;
  ComparisonRow r;
  r.name = "GT";
  r.outage_mean = 12.34567;
  r.wd_mean = 0.5;
  t.rows.push_back(r);
  const auto text = format_table(t);
  EXPECT_NE(text.find("12.346"), std::string::npos);
  EXPECT_NE(text.find("0.500"), std::string::npos);
  std::ostringstream os;
  write_table_csv(os, t);
  EXPECT_NE(os.str().find("GT,"), std::string::npos);
}

TEST(Samples, CsvHasOneLinePerSample) {
  Rng rng = make_rng(7);
  const auto env = oracle::random_env(rng, 5);
  std::vector<OutageSample> first;
  summarize(env, gm(), 4, {1, 2}, 1, &first);
  EXPECT_EQ(first.size(), 4 * env.regions.size());
  std::ostringstream os;
  write_samples_csv(os, {{"GM", first}});
  const auto s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), static_cast<long>(first.size() + 1));
  EXPECT_EQ(s.rfind("policy,", 0), 0u);
}

TEST(Benchmark, PipelineBuildsAValidInstance) {
  BenchmarkSpec spec;
  spec.generator.n_regions = 12;
  spec.qrf.n_trees = 10;
  const auto b = build_benchmark(spec);
  EXPECT_NO_THROW(sim::validate(b.env));
  EXPECT_EQ(b.env.regions.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_FALSE(b.env.repair_samples[i].empty());
    EXPECT_LE(b.env.intervals[i].lo, b.env.intervals[i].hi);
  }
  const auto again = build_benchmark(spec);
  EXPECT_EQ(again.env.intervals, b.env.intervals);
}

TEST(PredictionReport, RowsForEveryMethodAndGroup) {
  datagen::GeneratorConfig g;
  g.n_regions = 30;
  const auto data = datagen::split(datagen::generate(g), {}, 0);
  forest::QrfParams p;
  p.n_trees = 20;
  const auto rep = prediction_report(
      data, {conformal::Method::kCP, conformal::Method::kCQR, conformal::Method::kECQR}, 0.9, p);
  EXPECT_EQ(rep.rows.size(), 9u);
  for (const auto& r : rep.rows) {
    EXPECT_GE(r.coverage, 0.0);
    EXPECT_LE(r.coverage, 1.0);
    EXPECT_GT(r.n, 0u);
  }
  EXPECT_GE(rep.coverage_gap(conformal::Method::kECQR), 0.0);
  EXPECT_FALSE(format_report(rep).empty());
}
