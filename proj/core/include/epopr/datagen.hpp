#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "epopr/domain.hpp"

namespace epopr::datagen {

enum class Split : int { kTrain = 0, kCalibrate = 1, kTest = 2 };

std::string_view split_name(Split s);  // "train", "cal", "test"

struct GeneratorConfig {
  int n_regions = 55;
  PerGroup<int> samples_per_region_by_group = {8, 20, 40};
  // Standard deviation (hours) of the repair-duration noise per group.
  PerGroup<double> noise_scale_by_group = {6.0, 3.0, 1.5};
  std::pair<double, double> base_duration_range = {4.0, 24.0};
  // Mean of the Poisson request count per group.
  PerGroup<double> request_rate_by_group = {5.0, 12.0, 25.0};
  double city_extent_km = 20.0;
  std::uint64_t seed = 0;
};

// Throws Error(kInvalidConfig) on any violated invariant.
void validate(const GeneratorConfig& cfg);

struct Dataset {
  std::vector<Region> regions;
  std::vector<RepairRecord> records;
  std::vector<Split> split;  // one label per record

  friend bool operator==(const Dataset&, const Dataset&) = default;

  std::vector<RepairRecord> records_in(Split s) const;
  // All durations recorded for `id`, in record order.
  std::vector<double> durations_for(RegionId id) const;
};

// Noise-free mean repair duration g(x) for the generator seeded with `seed`.
// Exposed so statistical tests can compare against the ground truth.
class BaseDuration {
 public:
  BaseDuration(std::uint64_t seed, std::pair<double, double> range);
  double operator()(const std::vector<double>& features) const;

 private:
  std::array<double, kFeatureDim> weights_{};
  double bias_ = 0.0;
  std::pair<double, double> range_;
};

// Deterministic for a fixed cfg.seed. Every record is labelled kTrain; use
// split() to assign calibration/test labels.
Dataset generate(const GeneratorConfig& cfg);

struct SplitFractions {
  double train = 0.5;
  double calibrate = 0.25;
  double test = 0.25;
};

// Stratified by SensitiveGroup. Throws kPrecondition on bad fractions and
// kGroupTooSmall if a group present in the data has fewer than 3 records.
Dataset split(const Dataset& d, const SplitFractions& fractions,
              std::uint64_t seed);

// Dataset CSV persistence: a record table and a region table.
void save_csv(const Dataset& d, const std::filesystem::path& records_csv,
              const std::filesystem::path& regions_csv);
Dataset load_csv(const std::filesystem::path& records_csv,
                 const std::filesystem::path& regions_csv);

}  // namespace epopr::datagen
