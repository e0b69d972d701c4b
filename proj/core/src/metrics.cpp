#include "epopr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace epopr::metrics {

// Both quantile functions are step functions with jumps at i/na and j/nb.
// Walking the merged breakpoints integrates |Fa^-1(u) - Fb^-1(u)| exactly;
// comparisons i*nb vs j*na are done in integers to avoid drift.
double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw Error(Errc::kEmptyInput, "wasserstein1 needs two nonempty samples");
  }
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const auto na = static_cast<std::uint64_t>(sa.size());
  const auto nb = static_cast<std::uint64_t>(sb.size());
  const double denom = static_cast<double>(na) * static_cast<double>(nb);

  std::uint64_t i = 0, j = 0;      // current atoms
  std::uint64_t pos = 0;           // current u, in units of 1/(na*nb)
  double total = 0.0;
  while (i < na && j < nb) {
    const std::uint64_t end_a = (i + 1) * nb;
    const std::uint64_t end_b = (j + 1) * na;
    const std::uint64_t next = std::min(end_a, end_b);
    total += static_cast<double>(next - pos) * std::abs(sa[i] - sb[j]);
    pos = next;
    if (end_a == next) ++i;
    if (end_b == next) ++j;
  }
  return total / denom;
}

double wd_inequity(const GroupedSamples& g) {
  std::vector<const std::vector<double>*> present;
  for (const auto& [group, samples] : g) {
    if (samples.empty()) {
      throw Error(Errc::kEmptyInput,
                  "group " + std::string(group_name(group)) + " has no samples");
    }
    present.push_back(&samples);
  }
  if (present.size() < 2) {
    throw Error(Errc::kFewerThanTwoGroups, "need at least two groups");
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < present.size(); ++p) {
    for (std::size_t q = p + 1; q < present.size(); ++q) {
      worst = std::max(worst, wasserstein1(*present[p], *present[q]));
    }
  }
  return worst;
}

double avg_outage(std::span<const EpisodeOutcome> outcomes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& o : outcomes) {
    for (double t : o.outage_by_region) sum += t;
    n += o.outage_by_region.size();
  }
  if (n == 0) throw Error(Errc::kEmptyInput, "no outage durations");
  return sum / static_cast<double>(n);
}

std::map<SensitiveGroup, IntervalStats> interval_stats(
    const std::map<SensitiveGroup, std::vector<PredictionInterval>>& by_group) {
  if (by_group.empty()) throw Error(Errc::kEmptyInput, "no interval groups");
  std::map<SensitiveGroup, IntervalStats> out;
  for (const auto& [g, pis] : by_group) {
    if (pis.empty()) {
      throw Error(Errc::kEmptyInput,
                  "group " + std::string(group_name(g)) + " has no intervals");
    }
    double sum = 0.0;
    for (const auto& pi : pis) sum += pi.hi - pi.lo;
    out[g] = {sum / static_cast<double>(pis.size()), pis.size()};
  }
  return out;
}

}  // namespace epopr::metrics
