// Acceptance suite: one PASS/FAIL line per criterion. Thresholds and sample
// sizes are fixed here; nothing is read from the environment.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epopr/baselines.hpp"
#include "epopr/conformal.hpp"
#include "epopr/eval.hpp"
#include "epopr/metrics.hpp"
#include "epopr/stasac.hpp"
#include "oracles.hpp"

using namespace epopr;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

void report(int criterion, const Verdict& v) {
  std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", criterion, v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. Group-conditional coverage of ECQR and the coverage gap against CQR.
//
// With 55 regions the low-income test split holds a few dozen records, and
// the binomial spread of a single seed's coverage is wider than the
// [0.88, 0.93] window, so the check runs on the default generator scaled to
// enough regions that the window is statistically attainable. The forest is
// smaller than the library default so ten fits stay inside the time budget.
constexpr std::size_t kCoverageRegions = 2000;
constexpr int kCoverageTrees = 50;

Verdict coverage() {
  const auto t0 = Clock::now();
  int in_window = 0, gap_wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    datagen::GeneratorConfig g;
    g.n_regions = kCoverageRegions;
    g.seed = seed;
    const auto data = datagen::split(datagen::generate(g), {}, seed);
    forest::QrfParams p;
    p.n_trees = kCoverageTrees;
    p.seed = seed;
    const auto rep = eval::prediction_report(
        data, {conformal::Method::kCQR, conformal::Method::kECQR}, 0.9, p);
    bool ok = true;
    for (const auto& r : rep.rows) {
      if (r.method == conformal::Method::kECQR && (r.coverage < 0.88 || r.coverage > 0.93)) {
        ok = false;
      }
    }
    in_window += ok;
    const double gc = rep.coverage_gap(conformal::Method::kCQR);
    const double ge = rep.coverage_gap(conformal::Method::kECQR);
    gap_wins += gc > ge;
    per_seed += " s" + std::to_string(seed) + (ok ? "+" : "-") + fmt("(%.3f", gc) +
                fmt("/%.3f)", ge);
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = in_window >= 8 && gap_wins >= 8 && secs < 120.0;
  v.detail = "ECQR in [0.88,0.93] for all groups in " + std::to_string(in_window) +
             "/10 seeds, CQR gap > ECQR gap in " + std::to_string(gap_wins) + "/10, " +
             fmt("%.1f s;", secs) + per_seed;
  return v;
}

// 2. Calibration order statistic against integer arithmetic, exhaustively.
Verdict order_statistic() {
  Rng rng = make_rng(2);
  int checked = 0, wrong = 0;
  for (int pct : {50, 80, 90, 95}) {
    for (std::size_t n = 1; n <= 20; ++n) {
      const auto want = oracle::rank_oracle(n, pct);
      // {1..n} in shuffled order, so the k-th smallest score is k.
      std::vector<double> scores(n);
      std::iota(scores.begin(), scores.end(), 1.0);
      std::shuffle(scores.begin(), scores.end(), rng);
      const double q = conformal::calibration_quantile(scores, pct / 100.0);
      const double expect =
          want > n ? std::numeric_limits<double>::infinity() : static_cast<double>(want);
      wrong += q != expect;
      wrong += conformal::calibration_rank(n, pct / 100.0) != want;
      ++checked;
    }
  }
  Verdict v;
  v.pass = wrong == 0;
  v.detail = std::to_string(checked) + " (n, alpha) cells, " + std::to_string(wrong) +
             " mismatches";
  return v;
}

// 3. Wasserstein distance against min-cost transport, plus metric axioms.
Verdict wasserstein() {
  const auto t0 = Clock::now();
  Rng rng = make_rng(2024);
  auto multiset = [&] {
    std::vector<double> v(1 + uniform_index(rng, 6));
    for (auto& x : v) {
      // Mix of continuous values and repeated small integers.
      x = uniform01(rng) < 0.5 ? 10.0 * standard_normal(rng)
                               : static_cast<double>(uniform_index(rng, 4));
    }
    return v;
  };
  std::vector<std::vector<double>> corpus;
  for (int i = 0; i < 1000; ++i) corpus.push_back(multiset());
  double worst = 0.0;
  int axiom_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto& a = corpus[static_cast<std::size_t>(i)];
    const auto& b = corpus[static_cast<std::size_t>((i + 1) % 1000)];
    const auto& c = corpus[static_cast<std::size_t>((i + 2) % 1000)];
    const double ab = metrics::wasserstein1(a, b);
    worst = std::max(worst, std::abs(ab - oracle::transport_w1(a, b)));
    const double ba = metrics::wasserstein1(b, a);
    const double ac = metrics::wasserstein1(a, c);
    const double bc = metrics::wasserstein1(b, c);
    axiom_failures += ab < 0.0;
    axiom_failures += metrics::wasserstein1(a, a) != 0.0;
    axiom_failures += std::abs(ab - ba) > 1e-12;
    axiom_failures += ac > ab + bc + 1e-9;
    // Identity of indiscernibles: zero only for equal distributions.
    auto sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const bool same = std::equal(sa.begin(), sa.end(), sb.begin(), sb.end());
    axiom_failures += (ab == 0.0) != same && sa.size() == sb.size();
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = worst <= 1e-9 && axiom_failures == 0 && secs < 30.0;
  v.detail = "1000 pairs, max |W1 - transport| = " + fmt("%.3g", worst) + ", " +
             std::to_string(axiom_failures) + " axiom violations, " + fmt("%.2f s", secs);
  return v;
}

// 4. Simulator accounting. Coordinates on integers along a line, a
// power-of-two speed and durations in eighths make every partial sum exact,
// so recorded and recomputed outages must agree bit for bit.
sim::EnvConfig dyadic_env(Rng& rng) {
  const std::size_t n = 3 + uniform_index(rng, 10);
  sim::EnvConfig env;
  env.depot = {static_cast<double>(uniform_index(rng, 21)), 0.0};
  env.travel.speed_kmh = std::ldexp(1.0, static_cast<int>(uniform_index(rng, 6)));
  for (std::size_t i = 0; i < n; ++i) {
    Region r;
    r.id = static_cast<RegionId>(i);
    r.coord = {static_cast<double>(uniform_index(rng, 41)), 0.0};
    r.features.assign(kFeatureDim, 0.0);
    r.group = kAllGroups[(i + uniform_index(rng, 2)) % kNumGroups];
    r.request_count = static_cast<int>(uniform_index(rng, 10));
    env.regions.push_back(r);
    std::vector<double> samples(1 + uniform_index(rng, 4));
    for (auto& s : samples) s = static_cast<double>(1 + uniform_index(rng, 64)) / 8.0;
    env.intervals.push_back({*std::min_element(samples.begin(), samples.end()),
                             *std::max_element(samples.begin(), samples.end())});
    env.repair_samples.push_back(std::move(samples));
  }
  sim::compute_feature_scale(env);
  return env;
}

Verdict accounting() {
  Rng rng = make_rng(4);
  int outage_mismatch = 0, makespan_mismatch = 0, reward_mismatch = 0, cost_mismatch = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto env = dyadic_env(rng);
    sim::Episode ep(env, rng());
    std::vector<RegionId> order;
    while (!ep.done()) {
      const auto cands = ep.candidates();
      const auto id = cands[uniform_index(rng, cands.size())].region_id;
      order.push_back(id);
      ep.step(id);
    }
    const auto out = ep.outcome();
    const auto& repairs = ep.sampled_repairs();
    const auto hand = oracle::hand_outages(env, order, repairs);
    outage_mismatch += hand != out.outage_by_region;

    double travel = 0.0;
    Point at = env.depot;
    for (auto id : order) {
      const auto& p = env.regions[static_cast<std::size_t>(id)].coord;
      travel += std::abs(p.x - at.x) / env.travel.speed_kmh;
      at = p;
    }
    const double repair_total = std::accumulate(repairs.begin(), repairs.end(), 0.0);
    makespan_mismatch += out.makespan != travel + repair_total;
    makespan_mismatch +=
        out.makespan != *std::max_element(hand.begin(), hand.end());

    const std::vector<EpisodeOutcome> one{out};
    reward_mismatch += std::abs(out.reward + metrics::avg_outage(one)) > 1e-9;
    metrics::GroupedSamples groups;
    for (std::size_t i = 0; i < env.regions.size(); ++i) {
      groups[env.regions[i].group].push_back(out.outage_by_region[i]);
    }
    cost_mismatch += std::abs(out.cost - metrics::wd_inequity(groups)) > 1e-9;
    cost_mismatch += std::abs(out.cost - oracle::hand_cost(env.regions, hand)) > 1e-9;
  }
  Verdict v;
  v.pass = outage_mismatch + makespan_mismatch + reward_mismatch + cost_mismatch == 0;
  v.detail = "500 instances: outage mismatches " + std::to_string(outage_mismatch) +
             ", makespan " + std::to_string(makespan_mismatch) + ", reward " +
             std::to_string(reward_mismatch) + ", cost " + std::to_string(cost_mismatch);
  return v;
}

// 5. Constrained training on a 12-region instance.
//
// Durations are drawn at the scale where a single repair takes about two
// hours, so an 8 h equity bound is neither trivially met nor out of reach
// for a 12-region schedule.
eval::BenchmarkSpec desk_instance(std::uint64_t seed) {
  eval::BenchmarkSpec spec;
  spec.generator.n_regions = 12;
  spec.generator.seed = seed;
  spec.generator.base_duration_range = {0.5, 3.0};
  for (auto& s : spec.generator.noise_scale_by_group) s *= 0.15;
  spec.qrf.seed = seed;
  spec.env.d_limit = 8.0;
  return spec;
}

agent::TrainingConfig desk_training(std::uint64_t seed) {
  agent::TrainingConfig c;
  c.seed = seed;
  c.total_episodes = 3000;
  c.batch_size = 64;
  c.updates_per_cycle = 4;
  c.lr_actor = 1e-3;
  c.lr_critic = 1e-3;
  c.tau = 0.05;
  c.lambda_init = 1.0;
  c.eta_lambda = 0.0;
  return c;
}

constexpr std::size_t kEvalEpisodes = 200;

Verdict desk_training_check() {
  const auto t0 = Clock::now();
  int beats_gm = 0, within_bound = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = eval::build_benchmark(desk_instance(seed));
    const auto gm = eval::evaluate_policy(b.env, eval::shared(baselines::greedy_policy()),
                                          kEvalEpisodes, seed);
    const auto cfg = desk_training(seed);
    const auto trained = agent::train(b.env, cfg);
    const auto ag = eval::evaluate_policy(
        b.env,
        eval::shared(agent::make_policy(trained.nets.actor, b.env, agent::SelectMode::kGreedy)),
        kEvalEpisodes, seed);
    const bool a = ag.avg_outage <= gm.avg_outage;
    const bool c = ag.wd_inequity <= 1.1 * b.env.d_limit;
    beats_gm += a;
    within_bound += c;
    per_seed += " s" + std::to_string(seed) + fmt("(%.2f", ag.avg_outage) +
                fmt(" vs GM %.2f,", gm.avg_outage) + fmt(" WD %.2f)", ag.wd_inequity);
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = beats_gm >= 7 && within_bound >= 7 && secs < 900.0;
  v.detail = "outage <= GM in " + std::to_string(beats_gm) + "/10, cost <= d+10% in " +
             std::to_string(within_bound) + "/10, " + fmt("%.0f s;", secs) + per_seed;
  return v;
}

// 6. Equity against the request-volume order on the default 55-region
// benchmark.
constexpr std::size_t kEquityEpisodes = 1000;

agent::TrainingConfig equity_training(std::uint64_t seed) {
  auto c = desk_training(seed);
  c.total_episodes = kEquityEpisodes;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict equity() {
  const auto t0 = Clock::now();
  std::vector<double> agent_wd, gt_wd;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    eval::BenchmarkSpec spec;
    spec.generator.seed = seed;
    spec.qrf.seed = seed;
    const auto b = eval::build_benchmark(spec);
    const auto gt = eval::evaluate_policy(b.env, eval::shared(baselines::gt_policy(b.env.regions)),
                                          kEvalEpisodes, seed);
    const auto trained = agent::train(b.env, equity_training(seed));
    const auto ag = eval::evaluate_policy(
        b.env,
        eval::shared(agent::make_policy(trained.nets.actor, b.env, agent::SelectMode::kGreedy)),
        kEvalEpisodes, seed);
    gt_wd.push_back(gt.wd_inequity);
    agent_wd.push_back(ag.wd_inequity);
  }
  const double secs = seconds_since(t0);
  const double ma = median(agent_wd), mg = median(gt_wd);
  const double reduction = 1.0 - ma / mg;
  Verdict v;
  v.pass = reduction >= 0.20 && secs < 3600.0;
  v.detail = "median WD agent " + fmt("%.2f", ma) + " vs GT " + fmt("%.2f", mg) + " (" +
             fmt("%.1f%% lower), ", 100.0 * reduction) + fmt("%.0f s", secs);
  return v;
}

// 7. Analytic against central-difference gradients of both losses.
nn::ParamList critic_params(const agent::Nets& n) {
  nn::ParamList out;
  for (const auto* g : {&n.reward_critics, &n.cost_critics}) {
    for (const auto& c : *g) out.insert(out.end(), c.params().begin(), c.params().end());
  }
  return out;
}

Verdict gradients() {
  Rng rng = make_rng(7);
  double worst_actor = 0.0, worst_critic = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = oracle::tiny_agent_config(static_cast<std::uint64_t>(trial));
    cfg.beta = 0.01 + 0.2 * uniform01(rng);
    cfg.gamma = 0.5 + 0.5 * uniform01(rng);
    auto nets = agent::make_nets(cfg);
    nets.lambda = 2.0 * uniform01(rng);
    nets.scale_sum = 1.0 + 5.0 * uniform01(rng);
    nets.scale_count = 1;
    oracle::randomize(nets.actor.params(), rng, 0.6);
    oracle::randomize(critic_params(nets), rng, 0.6);
    const auto ts = oracle::random_transitions(rng, 1 + uniform_index(rng, 6), 5);
    const auto batch = oracle::pointers(ts);

    const auto& ap = nets.actor.params();
    nn::zero_grad(ap);
    agent::actor_loss_backward(batch, nets, cfg);
    const auto ga = oracle::analytic_gradient(ap);
    const auto na = oracle::numeric_gradient(
        ap, [&] { return agent::actor_loss_backward(batch, nets, cfg); });
    worst_actor = std::max(worst_actor, oracle::relative_error(ga, na));

    Rng target_rng = make_rng(static_cast<std::uint64_t>(trial), 1);
    const auto targets = agent::critic_targets(batch, nets, cfg, target_rng);
    const auto cp = critic_params(nets);
    nn::zero_grad(cp);
    agent::critic_losses(batch, nets, targets);
    const auto gc = oracle::analytic_gradient(cp);
    const auto nc = oracle::numeric_gradient(cp, [&] {
      const auto l = agent::critic_losses(batch, nets, targets);
      return l[0] + l[1] + l[2] + l[3];
    });
    worst_critic = std::max(worst_critic, oracle::relative_error(gc, nc));
  }
  Verdict v;
  v.pass = worst_actor < 1e-5 && worst_critic < 1e-5;
  v.detail = "100 cases, worst relative error actor " + fmt("%.2e", worst_actor) + ", critics " +
             fmt("%.2e", worst_critic);
  return v;
}

// 8. Policy invariants on fuzzed actors and states.
Verdict invariants() {
  Rng rng = make_rng(8);
  int invalid = 0, not_equivariant = 0, not_shift_invariant = 0, negative_lambda = 0;
  double worst_perm = 0.0;
  const std::size_t max_n = 55;
  auto cfg = oracle::tiny_agent_config(8);
  cfg.encoder.model_dim = 8;
  cfg.encoder.feedforward_dim = 16;
  cfg.score_hidden = 8;
  auto nets = agent::make_nets(cfg);
  double lambda = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    if (trial % 50 == 0) oracle::randomize(nets.actor.params(), rng, 0.8);
    std::vector<double> state(sim::kStateDim);
    for (auto& s : state) s = 2.0 * standard_normal(rng);
    const std::size_t n = 1 + static_cast<std::size_t>(trial) % max_n;
    std::vector<std::vector<double>> tokens(n, std::vector<double>(sim::kTokenDim));
    for (auto& t : tokens)
      for (auto& x : t) x = 2.0 * standard_normal(rng);

    const auto p = agent::policy(nets.actor, state, tokens);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    invalid += std::abs(total - 1.0) > 1e-9 ||
               std::any_of(p.begin(), p.end(), [](double x) { return !(x >= 0.0); });

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = tokens[perm[i]];
    const auto q = agent::policy(nets.actor, state, shuffled);
    double dev = 0.0;
    for (std::size_t i = 0; i < n; ++i) dev = std::max(dev, std::abs(q[i] - p[perm[i]]));
    worst_perm = std::max(worst_perm, dev);
    not_equivariant += dev > 1e-6;

    {
      nn::NoGradGuard ng;
      const auto scores = nets.actor.scores(state, tokens);
      const double shift = 100.0 * standard_normal(rng);
      const auto shifted = nn::softmax_rows(nn::add_scalar(scores, shift));
      double sdev = 0.0;
      for (std::size_t i = 0; i < n; ++i) sdev = std::max(sdev, std::abs(shifted.values()[i] - p[i]));
      not_shift_invariant += sdev > 1e-9;
    }

    lambda = agent::update_lambda(lambda, uniform01(rng), 16.0 * standard_normal(rng), 8.0);
    negative_lambda += lambda < 0.0;
  }
  Verdict v;
  v.pass = invalid + not_equivariant + not_shift_invariant + negative_lambda == 0;
  v.detail = "1000 states: invalid distributions " + std::to_string(invalid) +
             ", equivariance failures " + std::to_string(not_equivariant) +
             fmt(" (max dev %.2e)", worst_perm) + ", shift failures " +
             std::to_string(not_shift_invariant) + ", negative lambda " +
             std::to_string(negative_lambda);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "Run one criterion (1-8); all when omitted")
      ->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Verdict()>> checks = {
      coverage, order_statistic, wasserstein, accounting,
      desk_training_check, equity, gradients, invariants};
  bool all = true;
  for (int c = 1; c <= 8; ++c) {
    if (only != 0 && c != only) continue;
    Verdict v;
    try {
      v = checks[static_cast<std::size_t>(c - 1)]();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    report(c, v);
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
