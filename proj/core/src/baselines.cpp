#include "epopr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>

#include "epopr/error.hpp"

namespace epopr::baselines {
namespace {

double leg(const sim::EnvConfig& env, const Point& a, const Point& b) {
  return env.travel.travel_time(a, b);
}

const Point& coord(const sim::EnvConfig& env, RegionId id) {
  return env.regions[static_cast<std::size_t>(id)].coord;
}

double path_travel(const sim::EnvConfig& env, std::span<const RegionId> order) {
  double t = 0.0;
  Point at = env.depot;
  for (auto id : order) {
    t += leg(env, at, coord(env, id));
    at = coord(env, id);
  }
  return t;
}

}  // namespace

std::vector<RegionId> gt_sequence(const std::vector<Region>& regions,
                                  const std::optional<std::vector<RegionId>>& recorded) {
  if (recorded) {
    if (!is_permutation_of_ids(*recorded, regions.size())) {
      throw Error(Errc::kPrecondition,
                  "recorded sequence is not a permutation of the region ids");
    }
    return *recorded;
  }
  std::vector<RegionId> ids(regions.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](RegionId a, RegionId b) {
    const auto ca = regions[static_cast<std::size_t>(a)].request_count;
    const auto cb = regions[static_cast<std::size_t>(b)].request_count;
    return ca != cb ? ca > cb : a < b;
  });
  return ids;
}

sim::Policy sequence_policy(std::vector<RegionId> sequence) {
  auto seq = std::make_shared<const std::vector<RegionId>>(std::move(sequence));
  return [seq](const sim::EpisodeState&, const std::vector<sim::ActionCandidate>& cands) {
    if (cands.empty()) throw Error(Errc::kEmptyCandidates, "no candidates");
    for (auto id : *seq) {
      for (const auto& c : cands) {
        if (c.region_id == id) return id;
      }
    }
    throw Error(Errc::kPrecondition, "sequence exhausted before the episode ended");
  };
}

sim::Policy gt_policy(const std::vector<Region>& regions,
                      const std::optional<std::vector<RegionId>>& recorded) {
  return sequence_policy(gt_sequence(regions, recorded));
}

RegionId greedy_choice(const std::vector<sim::ActionCandidate>& candidates) {
  if (candidates.empty()) throw Error(Errc::kEmptyCandidates, "no candidates");
  const auto it = std::min_element(
      candidates.begin(), candidates.end(),
      [](const sim::ActionCandidate& a, const sim::ActionCandidate& b) {
        return a.distance_km != b.distance_km ? a.distance_km < b.distance_km
                                              : a.region_id < b.region_id;
      });
  return it->region_id;
}

sim::Policy greedy_policy() {
  return [](const sim::EpisodeState&, const std::vector<sim::ActionCandidate>& cands) {
    return greedy_choice(cands);
  };
}

double tour_cost(const sim::EnvConfig& env, std::span<const RegionId> order,
                 std::span<const double> point_estimates) {
  double repairs = 0.0;
  for (auto id : order) repairs += point_estimates[static_cast<std::size_t>(id)];
  return path_travel(env, order) + repairs;
}

std::vector<RegionId> nearest_neighbor_tour(const sim::EnvConfig& env) {
  const std::size_t n = env.regions.size();
  std::vector<bool> used(n, false);
  std::vector<RegionId> order;
  order.reserve(n);
  Point at = env.depot;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double d = leg(env, at, env.regions[i].coord);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    used[best] = true;
    order.push_back(static_cast<RegionId>(best));
    at = env.regions[best].coord;
  }
  return order;
}

std::vector<RegionId> two_opt(const sim::EnvConfig& env, std::vector<RegionId> order) {
  const std::size_t n = order.size();
  if (n < 2) return order;
  auto pt = [&](std::size_t k) -> const Point& {
    return k == 0 ? env.depot : coord(env, order[k - 1]);
  };
  // Positions 0..n with 0 the depot; reversing positions i..j (1 <= i < j)
  // replaces edges (i-1, i) and (j, j+1), the latter absent when j == n.
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 1; i < n; ++i) {
      for (std::size_t j = i + 1; j <= n; ++j) {
        double before = leg(env, pt(i - 1), pt(i));
        double after = leg(env, pt(i - 1), pt(j));
        if (j < n) {
          before += leg(env, pt(j), pt(j + 1));
          after += leg(env, pt(i), pt(j + 1));
        }
        if (after < before - 1e-12) {
          std::reverse(order.begin() + static_cast<std::ptrdiff_t>(i - 1),
                       order.begin() + static_cast<std::ptrdiff_t>(j));
          improved = true;
        }
      }
    }
  }
  return order;
}

std::vector<RegionId> tsp_st_tour(const sim::EnvConfig& env,
                                  std::span<const double> point_estimates) {
  if (point_estimates.size() != env.regions.size()) {
    throw Error(Errc::kDimensionMismatch, "one point estimate per region required");
  }
  for (double p : point_estimates) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw Error(Errc::kPrecondition, "point estimates must be positive and finite");
    }
  }
  // Repairs add the same total to every order, so only the path matters.
  return two_opt(env, nearest_neighbor_tour(env));
}

std::vector<RegionId> exact_tour(const sim::EnvConfig& env) {
  const std::size_t n = env.regions.size();
  if (n > 15) throw Error(Errc::kPrecondition, "exact tour limited to 15 regions");
  if (n == 0) return {};
  const std::size_t full = std::size_t{1} << n;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // best[mask][last]: shortest path from the depot visiting mask, ending at last.
  std::vector<double> best(full * n, kInf);
  std::vector<std::uint8_t> prev(full * n, 0xff);
  for (std::size_t i = 0; i < n; ++i) {
    best[(std::size_t{1} << i) * n + i] = leg(env, env.depot, env.regions[i].coord);
  }
  for (std::size_t mask = 1; mask < full; ++mask) {
    for (std::size_t last = 0; last < n; ++last) {
      const double cur = best[mask * n + last];
      if (!(mask >> last & 1) || cur == kInf) continue;
      for (std::size_t nx = 0; nx < n; ++nx) {
        if (mask >> nx & 1) continue;
        const std::size_t m2 = mask | (std::size_t{1} << nx);
        const double c = cur + leg(env, env.regions[last].coord, env.regions[nx].coord);
        if (c < best[m2 * n + nx]) {
          best[m2 * n + nx] = c;
          prev[m2 * n + nx] = static_cast<std::uint8_t>(last);
        }
      }
    }
  }
  std::size_t last = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (best[(full - 1) * n + i] < best[(full - 1) * n + last]) last = i;
  }
  std::vector<RegionId> order;
  std::size_t mask = full - 1;
  while (true) {
    order.push_back(static_cast<RegionId>(last));
    const auto p = prev[mask * n + last];
    mask &= ~(std::size_t{1} << last);
    if (p == 0xff) break;
    last = p;
  }
  std::reverse(order.begin(), order.end());
  return order;
}

std::vector<double> midpoint_estimates(const sim::EnvConfig& env) {
  std::vector<double> out;
  out.reserve(env.intervals.size());
  for (const auto& pi : env.intervals) {
    double m = pi.midpoint();
    if (!std::isfinite(m)) {
      // An unbounded interval has no midpoint; fall back to the sample mean.
      const auto& s = env.repair_samples[out.size()];
      m = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    }
    out.push_back(std::max(m, 1e-9));
  }
  return out;
}

}  // namespace epopr::baselines
