#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include "epopr/domain.hpp"

namespace epopr::sim {

struct TravelModel {
  double speed_kmh = 30.0;

  double travel_time(const Point& a, const Point& b) const {
    return distance_km(a, b) / speed_kmh;
  }
};

// Normalizers for network inputs, derived from the instance once.
struct FeatureScale {
  double duration_h = 1.0;  // typical single repair
  double horizon_h = 1.0;   // typical episode length
  double distance_km = 1.0; // instance diameter
};

struct EnvConfig {
  std::vector<Region> regions;
  // Historical repair durations per region id; episodes resample from these.
  std::vector<std::vector<double>> repair_samples;
  // Calibrated predictions per region id; the only duration information the
  // agent sees.
  std::vector<PredictionInterval> intervals;
  TravelModel travel;
  double prune_max_km = std::numeric_limits<double>::infinity();
  double d_limit = 8.0;  // equity bound, hours
  Point depot;
  FeatureScale scale;
};

// Throws Error(kInvalidConfig) naming the first violated invariant.
void validate(const EnvConfig& cfg);

// Fills cfg.scale from the regions, intervals and depot.
void compute_feature_scale(EnvConfig& cfg);

struct EpisodeState {
  Point position;
  double time = 0.0;  // hours since the outage began
  std::optional<RegionId> current_region;
  std::vector<bool> repaired;
  std::vector<double> outage_start;  // all zero: one mass-outage event
  std::vector<double> completed_outage;  // 0 until the region is repaired
  std::size_t steps = 0;
};

struct ActionCandidate {
  RegionId region_id = 0;
  PredictionInterval pi;
  Point coord;
  double elapsed_h = 0.0;
  double distance_km = 0.0;
  double travel_h = 0.0;
  SensitiveGroup group = SensitiveGroup::kLow;
};

inline constexpr std::size_t kTokenDim = 10;
inline constexpr std::size_t kStateDim = 11;

// Network encoding of a candidate: interval bounds, coordinates, elapsed
// time, distance, travel time, group one-hot. Infinite bounds are clipped.
std::vector<double> action_token(const ActionCandidate& c, const FeatureScale& s);

// Crew position and clock, progress overall and per group, mean completed
// outage per group, predicted remaining work.
std::vector<double> state_features(const EpisodeState& st, const EnvConfig& cfg);

struct StepLog {
  std::size_t step = 0;
  RegionId chosen = 0;
  double depart_h = 0.0;
  double travel_h = 0.0;
  double repair_h = 0.0;
  double complete_h = 0.0;
};

struct StepResult {
  double reward = 0.0;
  double cost = 0.0;
  bool done = false;
};

class Episode {
 public:
  Episode(const EnvConfig& cfg, std::uint64_t episode_seed);

  const EnvConfig& config() const { return *cfg_; }
  const EpisodeState& state() const { return state_; }
  bool done() const { return state_.steps == cfg_->regions.size(); }

  // Unrepaired regions within prune_max_km of the crew; if none qualify the
  // nearest unrepaired region is kept. Ordered by region id.
  std::vector<ActionCandidate> candidates() const;

  // Throws kUnknownRegion / kAlreadyRepaired. Reward and cost are zero until
  // the final step.
  StepResult step(RegionId chosen);

  // Valid only once done().
  EpisodeOutcome outcome() const;

  const std::vector<StepLog>& log() const { return log_; }
  // Durations drawn for this episode. Not part of any policy input.
  const std::vector<double>& sampled_repairs() const { return repair_; }

 private:
  const EnvConfig* cfg_;
  EpisodeState state_;
  std::vector<double> repair_;
  std::vector<RegionId> sequence_;
  std::vector<StepLog> log_;
  StepResult last_;
};

inline Episode reset(const EnvConfig& cfg, std::uint64_t episode_seed) {
  return Episode(cfg, episode_seed);
}

// Chooses the next region to repair.
using Policy = std::function<RegionId(const EpisodeState&,
                                      const std::vector<ActionCandidate>&)>;

EpisodeOutcome rollout(const EnvConfig& cfg, const Policy& policy,
                       std::uint64_t episode_seed,
                       std::vector<StepLog>* log = nullptr);

// Terminal reward and cost for a completed set of per-region outages.
double terminal_reward(const std::vector<double>& outage_by_region);
double terminal_cost(const std::vector<Region>& regions,
                     const std::vector<double>& outage_by_region);

// Instance file (JSON) and episode log (JSON lines).
void save_instance(const EnvConfig& cfg, const std::filesystem::path& path);
EnvConfig load_instance(const std::filesystem::path& path);
void write_episode_log(std::ostream& os, const std::vector<StepLog>& log,
                       std::uint64_t episode_seed);

}  // namespace epopr::sim
