#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "epopr/error.hpp"

namespace epopr {

inline constexpr std::size_t kFeatureDim = 9;
inline constexpr std::size_t kNumGroups = 3;

// Income tier of a region.
enum class SensitiveGroup : int { kLow = 0, kMiddle = 1, kHigh = 2 };

inline constexpr std::array<SensitiveGroup, kNumGroups> kAllGroups = {
    SensitiveGroup::kLow, SensitiveGroup::kMiddle, SensitiveGroup::kHigh};

inline constexpr std::size_t group_index(SensitiveGroup g) {
  return static_cast<std::size_t>(g);
}
std::string_view group_name(SensitiveGroup g);
// Accepts 0/1/2 only.
std::optional<SensitiveGroup> group_from_int(long long v);

// Per-group value table, indexed by SensitiveGroup.
template <typename T>
using PerGroup = std::array<T, kNumGroups>;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

double distance_km(const Point& a, const Point& b);

using RegionId = std::int32_t;

struct Region {
  RegionId id = 0;
  Point coord;
  std::vector<double> features;
  SensitiveGroup group = SensitiveGroup::kLow;
  std::int64_t request_count = 0;

  friend bool operator==(const Region&, const Region&) = default;
};

// Returns std::nullopt when every invariant holds, otherwise the violation.
std::optional<Error> validate_region(const Region& r);

struct RepairRecord {
  RegionId region_id = 0;
  std::vector<double> features;
  SensitiveGroup group = SensitiveGroup::kLow;
  double repair_duration = 0.0;  // hours, > 0

  friend bool operator==(const RepairRecord&, const RepairRecord&) = default;
};

std::optional<Error> validate_record(const RepairRecord& r);

struct PredictionInterval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  double midpoint() const { return 0.5 * (lo + hi); }
  bool contains(double y) const { return lo <= y && y <= hi; }

  friend bool operator==(const PredictionInterval&,
                         const PredictionInterval&) = default;
};

// Result of one full restoration episode. Outages are indexed by region id.
struct EpisodeOutcome {
  std::vector<double> outage_by_region;
  std::vector<RegionId> sequence;
  double reward = 0.0;  // -mean(outage_by_region)
  double cost = 0.0;    // max pairwise W1 between group outage samples
  double makespan = 0.0;
};

// True iff `sequence` holds each id in [0, n) exactly once.
bool is_permutation_of_ids(const std::vector<RegionId>& sequence,
                           std::size_t n);

}  // namespace epopr
