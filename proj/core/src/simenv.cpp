#include "epopr/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "epopr/metrics.hpp"
#include "epopr/random.hpp"
#include "json.hpp"

namespace epopr::sim {
namespace {

constexpr double kTokenClip = 5.0;

double clip(double v) { return std::clamp(v, -kTokenClip, kTokenClip); }

double finite_midpoint(const PredictionInterval& pi) {
  if (std::isfinite(pi.lo) && std::isfinite(pi.hi)) return pi.midpoint();
  if (std::isfinite(pi.lo)) return pi.lo;
  if (std::isfinite(pi.hi)) return pi.hi;
  return 0.0;
}

}  // namespace

void validate(const EnvConfig& cfg) {
  auto fail = [](const std::string& m) { throw Error(Errc::kInvalidConfig, m); };
  const auto n = cfg.regions.size();
  if (n == 0) fail("instance has no regions");
  if (cfg.repair_samples.size() != n) fail("need repair samples for every region");
  if (cfg.intervals.size() != n) fail("need a prediction interval for every region");
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.regions[i].id != static_cast<RegionId>(i)) {
      fail("region ids must be dense 0..N-1 in order");
    }
    if (auto err = validate_region(cfg.regions[i])) fail(err->what());
    if (cfg.repair_samples[i].empty()) {
      fail("region " + std::to_string(i) + " has no historical repair samples");
    }
    for (double y : cfg.repair_samples[i]) {
      if (!(y > 0.0) || !std::isfinite(y)) {
        fail("region " + std::to_string(i) + " has a non-positive repair sample");
      }
    }
    if (cfg.intervals[i].lo > cfg.intervals[i].hi) {
      fail("region " + std::to_string(i) + " has an inverted interval");
    }
  }
  if (!(cfg.travel.speed_kmh > 0.0)) fail("travel speed must be > 0");
  if (!(cfg.prune_max_km > 0.0)) fail("prune_max_km must be > 0");
  if (!(cfg.d_limit >= 0.0)) fail("d_limit must be >= 0");
  if (!(cfg.scale.duration_h > 0.0 && cfg.scale.horizon_h > 0.0 &&
        cfg.scale.distance_km > 0.0)) {
    fail("feature scales must be positive; call compute_feature_scale");
  }
}

void compute_feature_scale(EnvConfig& cfg) {
  const auto n = cfg.regions.size();
  double mid_sum = 0.0;
  for (const auto& pi : cfg.intervals) mid_sum += std::max(0.0, finite_midpoint(pi));
  double diameter = 0.0;
  double travel_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cfg.regions[i].coord;
    diameter = std::max(diameter, distance_km(p, cfg.depot));
    travel_sum += cfg.travel.travel_time(p, cfg.depot);
    for (std::size_t j = i + 1; j < n; ++j) {
      diameter = std::max(diameter, distance_km(p, cfg.regions[j].coord));
    }
  }
  const double nd = std::max<double>(1.0, static_cast<double>(n));
  cfg.scale.duration_h = std::max(1e-6, mid_sum / nd);
  // Rough episode length: all repairs plus half of the depot radius per leg.
  cfg.scale.horizon_h = std::max(1e-6, mid_sum + 0.5 * travel_sum);
  cfg.scale.distance_km = std::max(1e-6, diameter);
}

std::vector<double> action_token(const ActionCandidate& c, const FeatureScale& s) {
  std::vector<double> t(kTokenDim, 0.0);
  t[0] = clip(c.pi.lo / s.duration_h);
  t[1] = clip(c.pi.hi / s.duration_h);
  t[2] = clip(c.coord.x / s.distance_km);
  t[3] = clip(c.coord.y / s.distance_km);
  t[4] = clip(c.elapsed_h / s.horizon_h);
  t[5] = clip(c.distance_km / s.distance_km);
  t[6] = clip(c.travel_h / s.duration_h);
  t[7 + group_index(c.group)] = 1.0;
  return t;
}

std::vector<double> state_features(const EpisodeState& st, const EnvConfig& cfg) {
  std::vector<double> f(kStateDim, 0.0);
  const auto& s = cfg.scale;
  f[0] = clip(st.position.x / s.distance_km);
  f[1] = clip(st.position.y / s.distance_km);
  f[2] = clip(st.time / s.horizon_h);
  const auto n = cfg.regions.size();
  PerGroup<double> total{}, done{}, outage_sum{};
  double remaining = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = group_index(cfg.regions[i].group);
    total[g] += 1.0;
    if (st.repaired[i]) {
      done[g] += 1.0;
      outage_sum[g] += st.completed_outage[i];
    } else {
      remaining += std::max(0.0, finite_midpoint(cfg.intervals[i]));
    }
  }
  f[3] = static_cast<double>(st.steps) / static_cast<double>(n);
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    f[4 + g] = total[g] > 0.0 ? done[g] / total[g] : 1.0;
  }
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    f[7 + g] = done[g] > 0.0 ? clip(outage_sum[g] / done[g] / s.horizon_h) : 0.0;
  }
  f[10] = clip(remaining / s.horizon_h);
  return f;
}

Episode::Episode(const EnvConfig& cfg, std::uint64_t episode_seed) : cfg_(&cfg) {
  validate(cfg);
  const auto n = cfg.regions.size();
  state_.position = cfg.depot;
  state_.repaired.assign(n, false);
  state_.outage_start.assign(n, 0.0);
  repair_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& samples = cfg.repair_samples[i];
    Rng rng = make_rng(episode_seed, i);
    repair_[i] = samples[uniform_index(rng, samples.size())];
  }
  state_.completed_outage.assign(n, 0.0);
}

std::vector<ActionCandidate> Episode::candidates() const {
  const auto n = cfg_->regions.size();
  std::vector<ActionCandidate> out;
  std::optional<std::size_t> nearest;
  double nearest_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (state_.repaired[i]) continue;
    const auto& r = cfg_->regions[i];
    const double d = distance_km(state_.position, r.coord);
    if (d < nearest_d) {
      nearest_d = d;
      nearest = i;
    }
    if (d <= cfg_->prune_max_km) {
      out.push_back({r.id, cfg_->intervals[i], r.coord, state_.time, d,
                     cfg_->travel.travel_time(state_.position, r.coord), r.group});
    }
  }
  if (out.empty() && nearest) {
    const auto& r = cfg_->regions[*nearest];
    out.push_back({r.id, cfg_->intervals[*nearest], r.coord, state_.time, nearest_d,
                   cfg_->travel.travel_time(state_.position, r.coord), r.group});
  }
  return out;
}

StepResult Episode::step(RegionId chosen) {
  const auto n = cfg_->regions.size();
  if (chosen < 0 || static_cast<std::size_t>(chosen) >= n) {
    throw Error(Errc::kUnknownRegion, "region " + std::to_string(chosen));
  }
  const auto i = static_cast<std::size_t>(chosen);
  if (state_.repaired[i]) {
    throw Error(Errc::kAlreadyRepaired, "region " + std::to_string(chosen));
  }
  const auto& r = cfg_->regions[i];
  StepLog entry;
  entry.step = state_.steps;
  entry.chosen = chosen;
  entry.depart_h = state_.time;
  entry.travel_h = cfg_->travel.travel_time(state_.position, r.coord);
  entry.repair_h = repair_[i];
  state_.time += entry.travel_h;
  state_.time += entry.repair_h;
  entry.complete_h = state_.time;
  state_.completed_outage[i] = state_.time - state_.outage_start[i];

  state_.position = r.coord;
  state_.current_region = chosen;
  state_.repaired[i] = true;
  ++state_.steps;
  sequence_.push_back(chosen);
  log_.push_back(entry);

  StepResult res;
  if (done()) {
    res.done = true;
    res.reward = terminal_reward(state_.completed_outage);
    res.cost = terminal_cost(cfg_->regions, state_.completed_outage);
  }
  last_ = res;
  return res;
}

EpisodeOutcome Episode::outcome() const {
  if (!done()) throw Error(Errc::kPrecondition, "episode is not finished");
  EpisodeOutcome o;
  o.outage_by_region = state_.completed_outage;
  o.sequence = sequence_;
  o.reward = last_.reward;
  o.cost = last_.cost;
  o.makespan = state_.time;
  return o;
}

EpisodeOutcome rollout(const EnvConfig& cfg, const Policy& policy,
                       std::uint64_t episode_seed, std::vector<StepLog>* log) {
  Episode ep(cfg, episode_seed);
  while (!ep.done()) {
    const auto cands = ep.candidates();
    ep.step(policy(ep.state(), cands));
  }
  if (log) *log = ep.log();
  return ep.outcome();
}

double terminal_reward(const std::vector<double>& outage_by_region) {
  if (outage_by_region.empty()) return 0.0;
  const double sum =
      std::accumulate(outage_by_region.begin(), outage_by_region.end(), 0.0);
  return -sum / static_cast<double>(outage_by_region.size());
}

double terminal_cost(const std::vector<Region>& regions,
                     const std::vector<double>& outage_by_region) {
  metrics::GroupedSamples g;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    g[regions[i].group].push_back(outage_by_region[i]);
  }
  if (g.size() < 2) return 0.0;
  return metrics::wd_inequity(g);
}

void save_instance(const EnvConfig& cfg, const std::filesystem::path& path) {
  using nlohmann::json;
  json j;
  j["format"] = "epopr-instance";
  j["version"] = 1;
  j["depot"] = {cfg.depot.x, cfg.depot.y};
  j["speed_kmh"] = cfg.travel.speed_kmh;
  j["d_limit"] = cfg.d_limit;
  j["prune_max_km"] = std::isfinite(cfg.prune_max_km) ? json(cfg.prune_max_km) : json();
  auto bound = [](double v) { return std::isfinite(v) ? json(v) : json(); };
  json regions = json::array();
  for (std::size_t i = 0; i < cfg.regions.size(); ++i) {
    const auto& r = cfg.regions[i];
    json jr;
    jr["id"] = r.id;
    jr["coord"] = {r.coord.x, r.coord.y};
    jr["group"] = static_cast<int>(r.group);
    jr["features"] = r.features;
    jr["request_count"] = r.request_count;
    jr["repair_samples"] = cfg.repair_samples[i];
    if (i < cfg.intervals.size()) {
      jr["interval"] = {bound(cfg.intervals[i].lo), bound(cfg.intervals[i].hi)};
    }
    regions.push_back(std::move(jr));
  }
  j["regions"] = std::move(regions);
  std::ofstream os(path);
  if (!os) throw Error(Errc::kIo, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

EnvConfig load_instance(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream is(path);
  if (!is) throw Error(Errc::kIo, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(Errc::kParseError, path.string() + ": " + e.what());
  }
  EnvConfig cfg;
  try {
    cfg.depot = {j.at("depot").at(0).get<double>(), j.at("depot").at(1).get<double>()};
    cfg.travel.speed_kmh = j.at("speed_kmh").get<double>();
    cfg.d_limit = j.at("d_limit").get<double>();
    if (j.contains("prune_max_km") && !j["prune_max_km"].is_null()) {
      cfg.prune_max_km = j["prune_max_km"].get<double>();
    }
    const double inf = std::numeric_limits<double>::infinity();
    for (const auto& jr : j.at("regions")) {
      Region r;
      r.id = jr.at("id").get<RegionId>();
      r.coord = {jr.at("coord").at(0).get<double>(), jr.at("coord").at(1).get<double>()};
      const auto g = group_from_int(jr.at("group").get<long long>());
      if (!g) throw Error(Errc::kParseError, "bad group in instance");
      r.group = *g;
      r.features = jr.at("features").get<std::vector<double>>();
      r.request_count = jr.at("request_count").get<std::int64_t>();
      cfg.regions.push_back(r);
      cfg.repair_samples.push_back(jr.at("repair_samples").get<std::vector<double>>());
      if (jr.contains("interval")) {
        const auto& iv = jr["interval"];
        cfg.intervals.push_back({iv.at(0).is_null() ? -inf : iv.at(0).get<double>(),
                                 iv.at(1).is_null() ? inf : iv.at(1).get<double>()});
      } else {
        // No predictor output recorded: fall back to the empirical range.
        const auto& s = cfg.repair_samples.back();
        const auto [mn, mx] = std::minmax_element(s.begin(), s.end());
        cfg.intervals.push_back({s.empty() ? 0.0 : *mn, s.empty() ? 0.0 : *mx});
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::kSchemaError, path.string() + ": " + e.what());
  }
  compute_feature_scale(cfg);
  validate(cfg);
  return cfg;
}

void write_episode_log(std::ostream& os, const std::vector<StepLog>& log,
                       std::uint64_t episode_seed) {
  for (const auto& s : log) {
    nlohmann::json j = {{"episode_seed", episode_seed}, {"step", s.step},
                        {"chosen", s.chosen},           {"depart_h", s.depart_h},
                        {"travel_h", s.travel_h},       {"repair_h", s.repair_h},
                        {"complete_h", s.complete_h}};
    os << j.dump() << '\n';
  }
}

}  // namespace epopr::sim
