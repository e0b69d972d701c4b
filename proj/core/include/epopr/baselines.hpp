#pragma once

#include <optional>
#include <span>
#include <vector>

#include "epopr/domain.hpp"
#include "epopr/simenv.hpp"

namespace epopr::baselines {

// Descending request_count, ties by ascending id. A recorded sequence, when
// given, is returned verbatim after a permutation check.
std::vector<RegionId> gt_sequence(const std::vector<Region>& regions,
                                  const std::optional<std::vector<RegionId>>& recorded = {});

// Follows `sequence`, taking its first entry that is still a candidate.
sim::Policy sequence_policy(std::vector<RegionId> sequence);

sim::Policy gt_policy(const std::vector<Region>& regions,
                      const std::optional<std::vector<RegionId>>& recorded = {});

// Nearest candidate to the crew, ties by id.
RegionId greedy_choice(const std::vector<sim::ActionCandidate>& candidates);
sim::Policy greedy_policy();

// Travel legs from the depot through `order` plus the point repair estimates.
double tour_cost(const sim::EnvConfig& env, std::span<const RegionId> order,
                 std::span<const double> point_estimates);

// Nearest-neighbour construction from the depot.
std::vector<RegionId> nearest_neighbor_tour(const sim::EnvConfig& env);

// Improves an open tour with segment reversals until no move helps.
std::vector<RegionId> two_opt(const sim::EnvConfig& env, std::vector<RegionId> order);

// Open-path tour minimizing travel plus repair estimates; estimates must be
// positive, one per region.
std::vector<RegionId> tsp_st_tour(const sim::EnvConfig& env,
                                  std::span<const double> point_estimates);

// Exact optimum by dynamic programming over subsets; at most 15 regions.
std::vector<RegionId> exact_tour(const sim::EnvConfig& env);

// Interval midpoints, the point estimate used for TSP-ST.
std::vector<double> midpoint_estimates(const sim::EnvConfig& env);

}  // namespace epopr::baselines
