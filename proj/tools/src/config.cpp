#include "config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <set>
#include <string_view>

#include "epopr/error.hpp"

namespace epopr::cli {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(Errc::kInvalidConfig, where + ": " + what);
}

// Strict view of one JSON object: reads typed keys and rejects unknown ones.
class Section {
 public:
  Section(const json& j, std::string where, std::initializer_list<std::string_view> keys)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) bad(where_, "expected an object");
    const std::set<std::string_view> allowed(keys);
    for (const auto& [k, v] : j_.items()) {
      if (!allowed.count(k)) bad(where_, "unknown key '" + k + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return where_ + "." + key; }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      bad(path(key), e.what());
    }
  }

  // Non-negative integer into size_t (nlohmann would wrap negatives).
  void get_count(const char* key, std::size_t& out) const {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      bad(path(key), "expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  // null encodes +infinity.
  void get_unbounded(const char* key, double& out) const {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out = std::numeric_limits<double>::infinity();
    } else {
      get(key, out);
    }
  }

  template <typename T>
  void get_per_group(const char* key, PerGroup<T>& out) const {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != kNumGroups) bad(path(key), "expected 3 values");
    std::vector<T> tmp;
    get(key, tmp);
    for (std::size_t i = 0; i < kNumGroups; ++i) out[i] = tmp[i];
  }

 private:
  const json& j_;
  std::string where_;
};

json unbounded(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <typename T>
json per_group(const PerGroup<T>& v) {
  return json::array({v[0], v[1], v[2]});
}

std::string mode_name(agent::SelectMode m) {
  return m == agent::SelectMode::kGreedy ? "greedy" : "sample";
}

std::string optimizer_name(agent::OptimizerKind k) {
  return k == agent::OptimizerKind::kAdam ? "adam" : "sgd";
}

}  // namespace

void RunConfig::apply_seed() {
  generator.seed = seed;
  qrf.seed = seed;
  training.seed = seed;
}

void RunConfig::validate() const {
  datagen::validate(generator);
  forest::validate(qrf);
  agent::validate(training);
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(Errc::kAlphaOutOfRange,
                "alpha must lie in the open interval (0,1), got " + std::to_string(alpha));
  }
  const double fsum = split.train + split.calibrate + split.test;
  if (!(split.train > 0 && split.calibrate > 0 && split.test > 0) ||
      std::abs(fsum - 1.0) > 1e-9) {
    throw Error(Errc::kInvalidConfig, "split fractions must be positive and sum to 1");
  }
  if (!(env.d_limit >= 0.0)) throw Error(Errc::kInvalidConfig, "env.d_limit must be >= 0");
  if (!(env.speed_kmh > 0.0)) throw Error(Errc::kInvalidConfig, "env.speed_kmh must be > 0");
  if (!(env.prune_max_km > 0.0)) {
    throw Error(Errc::kInvalidConfig, "env.prune_max_km must be > 0");
  }
  if (evaluation.n_episodes == 0) {
    throw Error(Errc::kInvalidConfig, "evaluation.n_episodes must be >= 1");
  }
  if (evaluation.seeds.empty()) {
    throw Error(Errc::kInvalidConfig, "evaluation.seeds must not be empty");
  }
  if (jobs == 0) throw Error(Errc::kInvalidConfig, "jobs must be >= 1");
}

RunConfig from_json(const json& j) {
  RunConfig c;
  const Section top(j, "config",
                    {"seed", "generator", "split", "qrf", "calibration", "env", "training",
                     "evaluation", "jobs"});
  top.get("seed", c.seed);
  top.get_count("jobs", c.jobs);

  if (top.has("generator")) {
    const Section s(top.raw("generator"), "generator",
                    {"n_regions", "samples_per_region_by_group", "noise_scale_by_group",
                     "base_duration_range", "request_rate_by_group", "city_extent_km"});
    auto& g = c.generator;
    s.get("n_regions", g.n_regions);
    s.get_per_group("samples_per_region_by_group", g.samples_per_region_by_group);
    s.get_per_group("noise_scale_by_group", g.noise_scale_by_group);
    s.get_per_group("request_rate_by_group", g.request_rate_by_group);
    s.get("city_extent_km", g.city_extent_km);
    if (s.has("base_duration_range")) {
      std::vector<double> r;
      s.get("base_duration_range", r);
      if (r.size() != 2) bad(s.path("base_duration_range"), "expected [lo, hi]");
      g.base_duration_range = {r[0], r[1]};
    }
  }
  if (top.has("split")) {
    const Section s(top.raw("split"), "split", {"train", "calibrate", "test"});
    s.get("train", c.split.train);
    s.get("calibrate", c.split.calibrate);
    s.get("test", c.split.test);
  }
  if (top.has("qrf")) {
    const Section s(top.raw("qrf"), "qrf",
                    {"n_trees", "min_leaf", "max_depth", "feature_subsample", "bootstrap",
                     "n_threads"});
    s.get("n_trees", c.qrf.n_trees);
    s.get("min_leaf", c.qrf.min_leaf);
    s.get("max_depth", c.qrf.max_depth);
    s.get("feature_subsample", c.qrf.feature_subsample);
    s.get("bootstrap", c.qrf.bootstrap);
    s.get("n_threads", c.qrf.n_threads);
  }
  if (top.has("calibration")) {
    const Section s(top.raw("calibration"), "calibration", {"method", "alpha"});
    if (s.has("method")) {
      std::string m;
      s.get("method", m);
      const auto parsed = conformal::method_from_name(m);
      if (!parsed) bad(s.path("method"), "expected cp, cqr or ecqr");
      c.method = *parsed;
    }
    s.get("alpha", c.alpha);
  }
  if (top.has("env")) {
    const Section s(top.raw("env"), "env", {"d_limit", "prune_max_km", "speed_kmh", "depot"});
    s.get("d_limit", c.env.d_limit);
    s.get_unbounded("prune_max_km", c.env.prune_max_km);
    s.get("speed_kmh", c.env.speed_kmh);
    if (s.has("depot") && !s.raw("depot").is_null()) {
      std::vector<double> p;
      s.get("depot", p);
      if (p.size() != 2) bad(s.path("depot"), "expected [x, y] or null");
      c.env.depot = Point{p[0], p[1]};
    }
  }
  if (top.has("training")) {
    const Section s(top.raw("training"), "training",
                    {"gamma", "beta", "lambda_init", "eta_lambda", "tau", "lr_actor",
                     "lr_critic", "optimizer", "episodes_per_cycle", "updates_per_cycle",
                     "batch_size", "replay_capacity", "total_episodes", "warmup_episodes",
                     "d_limit", "encoder", "score_hidden", "critic_hidden"});
    auto& t = c.training;
    s.get("gamma", t.gamma);
    s.get("beta", t.beta);
    s.get("lambda_init", t.lambda_init);
    s.get("eta_lambda", t.eta_lambda);
    s.get("tau", t.tau);
    s.get("lr_actor", t.lr_actor);
    s.get("lr_critic", t.lr_critic);
    if (s.has("optimizer")) {
      std::string o;
      s.get("optimizer", o);
      if (o == "adam") {
        t.optimizer = agent::OptimizerKind::kAdam;
      } else if (o == "sgd") {
        t.optimizer = agent::OptimizerKind::kSgd;
      } else {
        bad(s.path("optimizer"), "expected adam or sgd");
      }
    }
    s.get_count("episodes_per_cycle", t.episodes_per_cycle);
    s.get_count("updates_per_cycle", t.updates_per_cycle);
    s.get_count("batch_size", t.batch_size);
    s.get_count("replay_capacity", t.replay_capacity);
    s.get_count("total_episodes", t.total_episodes);
    s.get_count("warmup_episodes", t.warmup_episodes);
    if (s.has("d_limit") && !s.raw("d_limit").is_null()) {
      double d = 0.0;
      s.get("d_limit", d);
      t.d_limit = d;
    }
    s.get_count("score_hidden", t.score_hidden);
    s.get_count("critic_hidden", t.critic_hidden);
    if (s.has("encoder")) {
      const Section e(s.raw("encoder"), "training.encoder",
                      {"model_dim", "n_heads", "n_layers", "feedforward_dim"});
      e.get_count("model_dim", t.encoder.model_dim);
      e.get_count("n_heads", t.encoder.n_heads);
      e.get_count("n_layers", t.encoder.n_layers);
      e.get_count("feedforward_dim", t.encoder.feedforward_dim);
    }
  }
  if (top.has("evaluation")) {
    const Section s(top.raw("evaluation"), "evaluation", {"n_episodes", "seeds", "agent_mode"});
    s.get_count("n_episodes", c.evaluation.n_episodes);
    s.get("seeds", c.evaluation.seeds);
    if (s.has("agent_mode")) {
      std::string m;
      s.get("agent_mode", m);
      if (m == "greedy") {
        c.evaluation.agent_mode = agent::SelectMode::kGreedy;
      } else if (m == "sample") {
        c.evaluation.agent_mode = agent::SelectMode::kSample;
      } else {
        bad(s.path("agent_mode"), "expected greedy or sample");
      }
    }
  }
  c.apply_seed();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& g = c.generator;
  const auto& t = c.training;
  json j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["generator"] = {
      {"n_regions", g.n_regions},
      {"samples_per_region_by_group", per_group(g.samples_per_region_by_group)},
      {"noise_scale_by_group", per_group(g.noise_scale_by_group)},
      {"base_duration_range", {g.base_duration_range.first, g.base_duration_range.second}},
      {"request_rate_by_group", per_group(g.request_rate_by_group)},
      {"city_extent_km", g.city_extent_km}};
  j["split"] = {{"train", c.split.train},
                {"calibrate", c.split.calibrate},
                {"test", c.split.test}};
  j["qrf"] = {{"n_trees", c.qrf.n_trees},
              {"min_leaf", c.qrf.min_leaf},
              {"max_depth", c.qrf.max_depth},
              {"feature_subsample", c.qrf.feature_subsample},
              {"bootstrap", c.qrf.bootstrap},
              {"n_threads", c.qrf.n_threads}};
  j["calibration"] = {{"method", std::string(conformal::method_name(c.method))},
                      {"alpha", c.alpha}};
  j["env"] = {{"d_limit", c.env.d_limit},
              {"prune_max_km", unbounded(c.env.prune_max_km)},
              {"speed_kmh", c.env.speed_kmh},
              {"depot", c.env.depot ? json::array({c.env.depot->x, c.env.depot->y})
                                    : json(nullptr)}};
  j["training"] = {{"gamma", t.gamma},
                   {"beta", t.beta},
                   {"lambda_init", t.lambda_init},
                   {"eta_lambda", t.eta_lambda},
                   {"tau", t.tau},
                   {"lr_actor", t.lr_actor},
                   {"lr_critic", t.lr_critic},
                   {"optimizer", optimizer_name(t.optimizer)},
                   {"episodes_per_cycle", t.episodes_per_cycle},
                   {"updates_per_cycle", t.updates_per_cycle},
                   {"batch_size", t.batch_size},
                   {"replay_capacity", t.replay_capacity},
                   {"total_episodes", t.total_episodes},
                   {"warmup_episodes", t.warmup_episodes},
                   {"d_limit", t.d_limit ? json(*t.d_limit) : json(nullptr)},
                   {"encoder",
                    {{"model_dim", t.encoder.model_dim},
                     {"n_heads", t.encoder.n_heads},
                     {"n_layers", t.encoder.n_layers},
                     {"feedforward_dim", t.encoder.feedforward_dim}}},
                   {"score_hidden", t.score_hidden},
                   {"critic_hidden", t.critic_hidden}};
  j["evaluation"] = {{"n_episodes", c.evaluation.n_episodes},
                     {"seeds", c.evaluation.seeds},
                     {"agent_mode", mode_name(c.evaluation.agent_mode)}};
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::kInvalidConfig, "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error(Errc::kInvalidConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void write_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::kIo, "cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
  if (!os) throw Error(Errc::kIo, "failed writing " + path.string());
}

}  // namespace epopr::cli
