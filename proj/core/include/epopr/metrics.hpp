#pragma once

#include <map>
#include <span>
#include <vector>

#include "epopr/domain.hpp"

namespace epopr::metrics {

// Outage-duration samples keyed by group. Listed groups must be nonempty.
using GroupedSamples = std::map<SensitiveGroup, std::vector<double>>;

// Order-1 Wasserstein distance between two empirical distributions, exact for
// unequal sample counts. Throws kEmptyInput if either side is empty.
double wasserstein1(std::span<const double> a, std::span<const double> b);

// Largest pairwise wasserstein1 across the listed groups. Throws
// kFewerThanTwoGroups when fewer than two groups are present.
double wd_inequity(const GroupedSamples& g);

// Mean over every (episode, region) outage duration.
double avg_outage(std::span<const EpisodeOutcome> outcomes);

struct IntervalStats {
  double mean_length = 0.0;
  std::size_t count = 0;
};

// Mean (hi - lo) per group. Throws kEmptyInput if a listed group has no
// intervals or the map is empty.
std::map<SensitiveGroup, IntervalStats> interval_stats(
    const std::map<SensitiveGroup, std::vector<PredictionInterval>>& by_group);

}  // namespace epopr::metrics
