#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "config.hpp"
#include "epopr/baselines.hpp"
#include "epopr/error.hpp"
#include "epopr/random.hpp"

namespace fs = std::filesystem;
using namespace epopr;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

int exit_code(Errc c) {
  switch (c) {
    case Errc::kInvalidConfig:
    case Errc::kAlphaOutOfRange:
      return kExitConfig;
    case Errc::kFeatureDimension:
    case Errc::kNegativeRequestCount:
    case Errc::kGroupTooSmall:
    case Errc::kParseError:
    case Errc::kSchemaError:
    case Errc::kEmptyTrainingSet:
    case Errc::kEmptyCalibration:
    case Errc::kUnknownGroup:
    case Errc::kEmptyInput:
    case Errc::kUnknownRegion:
    case Errc::kFormat:
    case Errc::kIo:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

struct Common {
  fs::path out = "results/run";
  std::optional<fs::path> data;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;

  fs::path input_dir() const { return data ? *data : out; }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--data", c.data, "Directory holding earlier artifacts (default: --out)");
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--seed", c.seed, "Seed for every stochastic component");
  cmd->add_option("--jobs", c.jobs, "Parallel rollout workers");
}

// Resolves file values, then flag overrides, validates and records the result.
cli::RunConfig resolve(const Common& c) {
  cli::RunConfig cfg = c.config ? cli::load_config(*c.config) : cli::RunConfig{};
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.apply_seed();
  }
  if (c.jobs) cfg.jobs = *c.jobs;
  cfg.validate();
  return cfg;
}

void prepare_out(const Common& c, const cli::RunConfig& cfg) {
  fs::create_directories(c.out);
  cli::write_config(cfg, c.out / "config.json");
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream os(p, mode);
  if (!os) throw Error(Errc::kIo, "cannot write " + p.string());
  return os;
}

fs::path require(const fs::path& p, const char* hint) {
  if (!fs::exists(p)) throw Error(Errc::kIo, p.string() + " not found; " + hint);
  return p;
}

datagen::Dataset load_dataset(const Common& c) {
  const auto dir = c.input_dir();
  return datagen::load_csv(require(dir / "records.csv", "run gen-data first"),
                           require(dir / "regions.csv", "run gen-data first"));
}

struct Predictor {
  forest::QrfModel model;
  std::optional<conformal::CalibrationFactor> factor;  // the last CAL1 section
};

Predictor load_predictor(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::kIo, "cannot open " + path.string());
  Predictor p;
  p.model = forest::load(is);
  while (is.peek() != std::char_traits<char>::eof()) p.factor = conformal::load(is);
  return p;
}

fs::path model_path(const Common& c) {
  return require(c.input_dir() / "model.qrf", "run train-predictor first");
}

sim::EnvConfig build_env(const Common& c, const cli::RunConfig& cfg) {
  const auto data = load_dataset(c);
  const auto pred = load_predictor(model_path(c));
  if (!pred.factor) {
    throw Error(Errc::kFormat, "model.qrf has no calibration section; run calibrate first");
  }
  return eval::make_env(data, pred.model, *pred.factor, cfg.env);
}

std::string format_row(const eval::ComparisonRow& r) {
  eval::ComparisonTable t;
  t.rows.push_back(r);
  return eval::format_table(t);
}

void log_cycle(const agent::CycleStats& s, std::size_t total_cycles) {
  const std::size_t every = std::max<std::size_t>(1, total_cycles / 20);
  if (s.cycle % every != 0 && s.cycle + 1 != total_cycles) return;
  std::fprintf(stderr, "cycle %zu/%zu  episodes %zu  reward %.3f  cost %.3f  lambda %.4f\n",
               s.cycle + 1, total_cycles, s.episodes, s.mean_reward, s.mean_cost, s.lambda);
}

agent::TrainResult train_agent(const sim::EnvConfig& env, const cli::RunConfig& cfg,
                               const fs::path& out) {
  const auto& tc = cfg.training;
  const std::size_t cycles =
      (tc.total_episodes + tc.episodes_per_cycle - 1) / std::max<std::size_t>(1, tc.episodes_per_cycle);
  auto res = agent::train(env, tc, [&](const agent::CycleStats& s) { log_cycle(s, cycles); });
  {
    auto os = open_out(out / "agent.stasac", std::ios::binary);
    agent::save(res, tc, os);
  }
  auto os = open_out(out / "curves.csv");
  agent::write_curves_csv(os, res.curves);
  return res;
}

eval::PolicyFactory agent_factory(const agent::ActorNet& actor, const sim::EnvConfig& env,
                                  agent::SelectMode mode) {
  if (mode == agent::SelectMode::kGreedy) {
    return eval::shared(agent::make_policy(actor, env, mode));
  }
  return [&actor, &env](std::uint64_t seed, std::size_t episode) {
    return agent::make_policy(actor, env, agent::SelectMode::kSample, mix_seed(seed, episode));
  };
}

eval::NamedPolicy baseline(const std::string& name, const sim::EnvConfig& env) {
  if (name == "gt") return {"GT", eval::shared(baselines::gt_policy(env.regions))};
  if (name == "gm") return {"GM", eval::shared(baselines::greedy_policy())};
  if (name == "tsp-st") {
    return {"TSP-ST", eval::shared(baselines::sequence_policy(
                          baselines::tsp_st_tour(env, baselines::midpoint_estimates(env))))};
  }
  throw Error(Errc::kInvalidConfig, "unknown policy '" + name + "'");
}

// ---- subcommands ----

void cmd_gen_data(const Common& c) {
  const auto cfg = resolve(c);
  prepare_out(c, cfg);
  const auto d = datagen::split(datagen::generate(cfg.generator), cfg.split, cfg.seed);
  datagen::save_csv(d, c.out / "records.csv", c.out / "regions.csv");
  std::printf("wrote %zu records for %zu regions to %s\n", d.records.size(), d.regions.size(),
              c.out.string().c_str());
}

void cmd_train_predictor(const Common& c) {
  const auto cfg = resolve(c);
  const auto data = load_dataset(c);
  prepare_out(c, cfg);
  const auto train = data.records_in(datagen::Split::kTrain);
  const auto model = forest::fit(train, cfg.qrf);
  auto os = open_out(c.out / "model.qrf", std::ios::binary);
  forest::save(model, os);
  std::printf("fitted %d trees on %zu records\n", cfg.qrf.n_trees, train.size());
}

void cmd_calibrate(const Common& c, const std::optional<std::string>& method,
                   const std::optional<double>& alpha) {
  auto cfg = resolve(c);
  if (method) {
    const auto m = conformal::method_from_name(*method);
    if (!m) throw Error(Errc::kInvalidConfig, "--method must be cp, cqr or ecqr");
    cfg.method = *m;
  }
  if (alpha) cfg.alpha = *alpha;
  cfg.validate();
  const auto data = load_dataset(c);
  const auto src = model_path(c);
  const auto pred = load_predictor(src);
  prepare_out(c, cfg);
  const auto factor = conformal::calibrate(
      pred.model, data.records_in(datagen::Split::kCalibrate), cfg.alpha, cfg.method);
  const auto dst = c.out / "model.qrf";
  if (!fs::exists(dst) || !fs::equivalent(src, dst)) {
    fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
  }
  auto os = open_out(dst, std::ios::binary | std::ios::app);
  conformal::save(factor, os);
  std::printf("appended %s calibration (alpha %.3f) to %s\n",
              std::string(conformal::method_name(cfg.method)).c_str(), cfg.alpha,
              dst.string().c_str());
}

void cmd_predict_report(const Common& c) {
  const auto cfg = resolve(c);
  const auto data = load_dataset(c);
  prepare_out(c, cfg);
  const std::vector<conformal::Method> methods = {conformal::Method::kCP, conformal::Method::kCQR,
                                                  conformal::Method::kECQR};
  const auto mp = c.input_dir() / "model.qrf";
  const auto rep = fs::exists(mp)
                       ? eval::prediction_report(load_predictor(mp).model, data, methods, cfg.alpha)
                       : eval::prediction_report(data, methods, cfg.alpha, cfg.qrf);
  {
    auto os = open_out(c.out / "report.csv");
    eval::write_report_csv(os, rep);
  }
  const auto text = eval::format_report(rep);
  auto os = open_out(c.out / "report.txt");
  os << text;
  std::cout << text;
}

void cmd_train_agent(const Common& c) {
  const auto cfg = resolve(c);
  const auto env = build_env(c, cfg);
  prepare_out(c, cfg);
  const auto res = train_agent(env, cfg, c.out);
  std::printf("trained %llu episodes, final lambda %.4f\n",
              static_cast<unsigned long long>(res.episodes_run), res.nets.lambda);
}

void cmd_evaluate(const Common& c, const std::string& policy,
                  const std::optional<fs::path>& checkpoint) {
  const auto cfg = resolve(c);
  const auto env = build_env(c, cfg);
  std::optional<agent::LoadedAgent> loaded;
  eval::NamedPolicy p;
  if (policy == "stasac") {
    const auto path = checkpoint ? *checkpoint : c.input_dir() / "agent.stasac";
    std::ifstream is(require(path, "run train-agent first or pass --checkpoint"),
                     std::ios::binary);
    loaded = agent::load(is);
    p = {"STA-SAC", agent_factory(loaded->nets.actor, env, cfg.evaluation.agent_mode)};
  } else {
    p = baseline(policy, env);
  }
  prepare_out(c, cfg);
  std::vector<eval::OutageSample> samples;
  const auto row = eval::summarize(env, p, cfg.evaluation.n_episodes, cfg.evaluation.seeds,
                                   cfg.jobs, &samples);
  eval::ComparisonTable t;
  t.rows.push_back(row);
  {
    auto os = open_out(c.out / "table.csv");
    eval::write_table_csv(os, t);
  }
  {
    auto os = open_out(c.out / "samples.csv");
    eval::write_samples_csv(os, samples);
  }
  const auto text = format_row(row);
  auto os = open_out(c.out / "table.txt");
  os << text;
  std::cout << text;
}

void cmd_compare(const Common& c, const std::optional<fs::path>& checkpoint) {
  const auto cfg = resolve(c);
  const auto env = build_env(c, cfg);
  prepare_out(c, cfg);
  const auto path = checkpoint ? *checkpoint : c.input_dir() / "agent.stasac";
  agent::Nets nets;
  if (fs::exists(path)) {
    std::ifstream is(path, std::ios::binary);
    nets = agent::load(is).nets;
  } else {
    if (checkpoint) require(path, "checkpoint missing");
    std::fprintf(stderr, "no agent checkpoint found; training one\n");
    nets = train_agent(env, cfg, c.out).nets;
  }
  std::vector<eval::NamedPolicy> policies = {baseline("gt", env), baseline("gm", env),
                                             baseline("tsp-st", env)};
  policies.push_back({"STA-SAC", agent_factory(nets.actor, env, cfg.evaluation.agent_mode)});

  eval::ComparisonTable t;
  std::vector<std::pair<std::string, std::vector<eval::OutageSample>>> samples;
  for (const auto& p : policies) {
    samples.emplace_back(p.name, std::vector<eval::OutageSample>{});
    t.rows.push_back(eval::summarize(env, p, cfg.evaluation.n_episodes, cfg.evaluation.seeds,
                                     cfg.jobs, &samples.back().second));
  }
  {
    auto os = open_out(c.out / "table.csv");
    eval::write_table_csv(os, t);
  }
  {
    auto os = open_out(c.out / "samples.csv");
    eval::write_samples_csv(os, samples);
  }
  const auto text = eval::format_table(t);
  auto os = open_out(c.out / "table.txt");
  os << text;
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equity-aware post-hurricane power outage restoration toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, common);
  auto* trp = app.add_subcommand("train-predictor", "Fit the quantile regression forest");
  add_common(trp, common);

  auto* cal = app.add_subcommand("calibrate", "Calibrate prediction intervals");
  add_common(cal, common);
  std::optional<std::string> method;
  std::optional<double> alpha;
  cal->add_option("--method", method, "cp, cqr or ecqr");
  cal->add_option("--alpha", alpha, "Target coverage in (0,1)");

  auto* rep = app.add_subcommand("predict-report", "Per-group coverage and interval lengths");
  add_common(rep, common);
  auto* tra = app.add_subcommand("train-agent", "Train the restoration agent");
  add_common(tra, common);

  auto* ev = app.add_subcommand("evaluate", "Evaluate one policy");
  add_common(ev, common);
  std::string policy;
  std::optional<fs::path> checkpoint;
  ev->add_option("--policy", policy, "gt, gm, tsp-st or stasac")
      ->required()
      ->check(CLI::IsMember({"gt", "gm", "tsp-st", "stasac"}));
  ev->add_option("--checkpoint", checkpoint, "Agent checkpoint (default: <data>/agent.stasac)");

  auto* cmp = app.add_subcommand("compare", "Compare all policies");
  add_common(cmp, common);
  cmp->add_option("--checkpoint", checkpoint, "Agent checkpoint (default: <data>/agent.stasac)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) cmd_gen_data(common);
    if (*trp) cmd_train_predictor(common);
    if (*cal) cmd_calibrate(common, method, alpha);
    if (*rep) cmd_predict_report(common);
    if (*tra) cmd_train_agent(common);
    if (*ev) cmd_evaluate(common, policy, checkpoint);
    if (*cmp) cmd_compare(common, checkpoint);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
