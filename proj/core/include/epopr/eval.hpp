#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "epopr/conformal.hpp"
#include "epopr/datagen.hpp"
#include "epopr/forest.hpp"
#include "epopr/simenv.hpp"

namespace epopr::eval {

struct EnvOptions {
  double d_limit = 8.0;
  double prune_max_km = std::numeric_limits<double>::infinity();
  double speed_kmh = 30.0;
  // Crew depot; the city centre when unset.
  std::optional<Point> depot;
};

// Simulator instance from a dataset: every record of a region becomes one of
// its historical repair samples, and each region gets the calibrated
// interval for its features.
sim::EnvConfig make_env(const datagen::Dataset& data, const forest::QrfModel& model,
                        const conformal::CalibrationFactor& factor, const EnvOptions& opt);

// The full synthetic pipeline: generate, split, fit, calibrate, build the
// simulator instance.
struct BenchmarkSpec {
  datagen::GeneratorConfig generator{};
  datagen::SplitFractions fractions{};
  forest::QrfParams qrf{};
  double alpha = 0.9;
  conformal::Method method = conformal::Method::kECQR;
  EnvOptions env{};
};

struct Benchmark {
  datagen::Dataset data;
  forest::QrfModel model;
  conformal::CalibrationFactor factor;
  sim::EnvConfig env;
};

Benchmark build_benchmark(const BenchmarkSpec& spec);

// Builds the policy for one episode of one experiment seed. Factories let
// stateful (sampling) policies run on several threads without sharing.
using PolicyFactory = std::function<sim::Policy(std::uint64_t seed, std::size_t episode)>;

PolicyFactory shared(sim::Policy p);

struct OutageSample {
  std::size_t episode = 0;
  RegionId region = 0;
  SensitiveGroup group = SensitiveGroup::kLow;
  double outage = 0.0;
};

struct EvalResult {
  double avg_outage = 0.0;
  double wd_inequity = 0.0;         // mean of per-episode costs
  double wd_inequity_pooled = 0.0;  // all episodes' samples pooled per group
  std::vector<EpisodeOutcome> outcomes;
  std::vector<OutageSample> samples;
};

// Episode e runs with seed mix_seed(seed, e). Results do not depend on jobs.
EvalResult evaluate_policy(const sim::EnvConfig& env, const PolicyFactory& policy,
                           std::size_t n_episodes, std::uint64_t seed,
                           std::size_t jobs = 1);

struct NamedPolicy {
  std::string name;
  PolicyFactory factory;
};

struct ComparisonRow {
  std::string name;
  double outage_mean = 0.0, outage_std = 0.0;
  double wd_mean = 0.0, wd_std = 0.0;
  double wd_pooled_mean = 0.0;
  std::vector<double> outage_by_seed, wd_by_seed;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
};

// One policy across seeds: mean and sample std of both metrics. If
// `first_seed_samples` is given it receives the raw samples of seeds[0].
ComparisonRow summarize(const sim::EnvConfig& env, const NamedPolicy& policy,
                        std::size_t n_episodes, const std::vector<std::uint64_t>& seeds,
                        std::size_t jobs = 1,
                        std::vector<OutageSample>* first_seed_samples = nullptr);

ComparisonTable compare(const sim::EnvConfig& env, const std::vector<NamedPolicy>& policies,
                        std::size_t n_episodes, const std::vector<std::uint64_t>& seeds,
                        std::size_t jobs = 1);

void write_table_csv(std::ostream& os, const ComparisonTable& t);
// Fixed-width table, three decimals.
std::string format_table(const ComparisonTable& t);
void write_samples_csv(std::ostream& os, const std::vector<OutageSample>& samples);
// Same columns with a leading policy name.
void write_samples_csv(std::ostream& os,
                       const std::vector<std::pair<std::string, std::vector<OutageSample>>>&
                           by_policy);

struct PredictionRow {
  conformal::Method method = conformal::Method::kECQR;
  SensitiveGroup group = SensitiveGroup::kLow;
  double coverage = 0.0;
  double mean_length = 0.0;
  std::size_t n = 0;
};

struct PredictionReport {
  double alpha = 0.9;
  std::vector<PredictionRow> rows;

  // Largest minus smallest group coverage for one method.
  double coverage_gap(conformal::Method m) const;
};

// Fits the forest on the train split, calibrates each method on the
// calibration split and scores the test split.
PredictionReport prediction_report(const datagen::Dataset& data,
                                   const std::vector<conformal::Method>& methods,
                                   double alpha, const forest::QrfParams& params);

// Same, reusing an already fitted forest.
PredictionReport prediction_report(const forest::QrfModel& model,
                                   const datagen::Dataset& data,
                                   const std::vector<conformal::Method>& methods,
                                   double alpha);

void write_report_csv(std::ostream& os, const PredictionReport& r);
std::string format_report(const PredictionReport& r);

}  // namespace epopr::eval
