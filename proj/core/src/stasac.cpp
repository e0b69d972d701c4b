#include "epopr/stasac.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "epopr/binary_io.hpp"
#include "epopr/error.hpp"

namespace epopr::agent {
namespace {

nn::Tensor token_matrix(const std::vector<std::vector<double>>& tokens, std::size_t width) {
  if (tokens.empty()) throw Error(Errc::kEmptyCandidates, "no action candidates");
  std::vector<double> v;
  v.reserve(tokens.size() * width);
  for (const auto& t : tokens) {
    if (t.size() != width) {
      throw Error(Errc::kDimensionMismatch, "action token has " + std::to_string(t.size()) +
                                                " features, expected " + std::to_string(width));
    }
    v.insert(v.end(), t.begin(), t.end());
  }
  return nn::Tensor::constant(tokens.size(), width, std::move(v));
}

constexpr std::size_t kCriticIn = sim::kStateDim + sim::kTokenDim;

void append_row(std::vector<double>& out, std::span<const double> state,
                std::span<const double> token) {
  out.insert(out.end(), state.begin(), state.end());
  out.insert(out.end(), token.begin(), token.end());
}

nn::Tensor rows_tensor(std::vector<double> v) {
  const std::size_t m = v.size() / kCriticIn;
  return nn::Tensor::constant(m, kCriticIn, std::move(v));
}

// (s, a) rows for the stored actions of a batch.
nn::Tensor chosen_rows(std::span<const Transition* const> batch) {
  std::vector<double> v;
  v.reserve(batch.size() * kCriticIn);
  for (const auto* t : batch) append_row(v, t->state, t->tokens.at(t->action));
  return rows_tensor(std::move(v));
}

std::vector<double> column(const nn::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

std::vector<double> min_of(const std::array<CriticNet, 2>& nets, const nn::Tensor& rows) {
  const auto a = column(nets[0].forward(rows));
  const auto b = column(nets[1].forward(rows));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::min(a[i], b[i]);
  return out;
}

nn::ParamList gather(std::initializer_list<const CriticNet*> nets) {
  nn::ParamList out;
  for (const auto* n : nets) out.insert(out.end(), n->params().begin(), n->params().end());
  return out;
}

}  // namespace

ActorNet::ActorNet(const nn::EncoderConfig& enc, std::size_t score_hidden, Rng& rng)
    : encoder_(enc, rng), state_proj_(sim::kStateDim, enc.model_dim, rng) {
  if (score_hidden == 0) throw Error(Errc::kInvalidConfig, "score_hidden must be positive");
  const std::size_t in = 3 * enc.model_dim + enc.input_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * score_hidden);
  for (auto& x : w) x = bound * (2.0 * uniform01(rng) - 1.0);
  w_a_ = nn::Tensor::parameter(in, score_hidden, std::move(w));
  // A zero output vector starts the policy uniform.
  v_a_ = nn::Tensor::parameter(score_hidden, 1, std::vector<double>(score_hidden, 0.0));
  encoder_.collect(params_);
  state_proj_.collect(params_);
  params_.push_back(w_a_);
  params_.push_back(v_a_);
}

nn::Tensor ActorNet::scores(std::span<const double> state,
                            const std::vector<std::vector<double>>& tokens) const {
  if (state.size() != sim::kStateDim) {
    throw Error(Errc::kDimensionMismatch, "state has " + std::to_string(state.size()) +
                                              " features, expected " +
                                              std::to_string(sim::kStateDim));
  }
  const nn::Tensor raw = token_matrix(tokens, encoder_.config().input_dim);
  const auto enc = encoder_.encode(raw);
  const nn::Tensor query =
      nn::concat_cols(enc.cls, state_proj_.forward(nn::Tensor::row(state)));
  const nn::Tensor keys = nn::concat_cols(enc.tokens, raw);
  const nn::Tensor x = nn::concat_cols(keys, nn::repeat_rows(query, tokens.size()));
  const nn::Tensor h = nn::tanh(nn::matmul(x, w_a_));
  return nn::transpose(nn::matmul(h, v_a_));
}

nn::Tensor ActorNet::log_policy(std::span<const double> state,
                                const std::vector<std::vector<double>>& tokens) const {
  return nn::log_softmax_rows(scores(state, tokens));
}

CriticNet::CriticNet(std::size_t hidden, Rng& rng)
    : mlp_({kCriticIn, hidden, hidden, 1}, rng) {
  mlp_.collect(params_);
}

nn::Tensor CriticNet::forward(const nn::Tensor& rows) const { return mlp_.forward(rows); }

void validate(const TrainingConfig& c) {
  auto bad = [](const std::string& m) { throw Error(Errc::kInvalidConfig, m); };
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) bad("gamma must lie in (0, 1]");
  if (!(c.beta > 0.0)) bad("beta must be positive");
  if (!(c.lambda_init >= 0.0)) bad("lambda_init must be >= 0");
  if (!(c.eta_lambda >= 0.0)) bad("eta_lambda must be >= 0");
  if (!(c.tau > 0.0 && c.tau <= 1.0)) bad("tau must lie in (0, 1]");
  if (!(c.lr_actor > 0.0)) bad("lr_actor must be positive");
  if (!(c.lr_critic > 0.0)) bad("lr_critic must be positive");
  if (c.episodes_per_cycle == 0) bad("episodes_per_cycle must be positive");
  if (c.batch_size == 0) bad("batch_size must be positive");
  if (c.replay_capacity == 0) bad("replay_capacity must be positive");
  if (c.d_limit && !(*c.d_limit >= 0.0)) bad("d_limit must be >= 0");
  if (c.encoder.input_dim != sim::kTokenDim) {
    bad("encoder input_dim must equal the action token width " +
        std::to_string(sim::kTokenDim));
  }
  nn::validate(c.encoder);
  if (c.score_hidden == 0) bad("score_hidden must be positive");
  if (c.critic_hidden == 0) bad("critic_hidden must be positive");
}

ReplayStore::ReplayStore(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(make_rng(seed)) {
  if (capacity == 0) throw Error(Errc::kInvalidConfig, "replay capacity must be positive");
}

void ReplayStore::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayStore::sample(std::size_t n) {
  if (items_.empty()) throw Error(Errc::kEmptyInput, "replay store is empty");
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[uniform_index(rng_, items_.size())]);
  return out;
}

std::size_t select_action(std::span<const double> probs, SelectMode mode, Rng& rng) {
  if (probs.empty()) throw Error(Errc::kInvalidDistribution, "empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(Errc::kInvalidDistribution, "probabilities must be finite and >= 0");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(Errc::kInvalidDistribution, "probabilities sum to " + std::to_string(total));
  }
  if (mode == SelectMode::kGreedy) {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) -
                                    probs.begin());
  }
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u at or past the final boundary: take the last positive.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

double Nets::scale() const {
  if (scale_count == 0) return 1.0;
  const double s = scale_sum / static_cast<double>(scale_count);
  return s > 1e-9 ? s : 1.0;
}

Nets make_nets(const TrainingConfig& cfg) {
  validate(cfg);
  Nets n;
  Rng actor_rng = make_rng(cfg.seed, 1);
  n.actor = ActorNet(cfg.encoder, cfg.score_hidden, actor_rng);
  for (std::size_t j = 0; j < 2; ++j) {
    Rng rr = make_rng(cfg.seed, 10 + j);
    Rng rc = make_rng(cfg.seed, 20 + j);
    n.reward_critics[j] = CriticNet(cfg.critic_hidden, rr);
    n.cost_critics[j] = CriticNet(cfg.critic_hidden, rc);
    // Targets start as exact copies.
    Rng tr = make_rng(cfg.seed, 10 + j);
    Rng tc = make_rng(cfg.seed, 20 + j);
    n.reward_targets[j] = CriticNet(cfg.critic_hidden, tr);
    n.cost_targets[j] = CriticNet(cfg.critic_hidden, tc);
  }
  n.lambda = cfg.lambda_init;
  return n;
}

std::vector<double> policy(const ActorNet& actor, std::span<const double> state,
                           const std::vector<std::vector<double>>& tokens) {
  nn::NoGradGuard ng;
  const auto lp = actor.log_policy(state, tokens);
  std::vector<double> p(lp.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp.values()[i]);
  return p;
}

Targets critic_targets(std::span<const Transition* const> batch, const Nets& nets,
                       const TrainingConfig& cfg, Rng& rng) {
  nn::NoGradGuard ng;
  const double s = nets.scale();
  Targets out;
  out.reward.resize(batch.size());
  out.cost.resize(batch.size());
  std::vector<double> rows;
  std::vector<std::size_t> live;
  std::vector<double> entropy;  // beta * log pi(a'|s')
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto* t = batch[i];
    out.reward[i] = t->reward / s;
    out.cost[i] = t->cost / s;
    if (t->done) continue;
    const auto lp = nets.actor.log_policy(t->next_state, t->next_tokens);
    std::vector<double> p(lp.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(lp.values()[k]);
    // Renormalize against accumulated rounding before the categorical draw.
    double z = 0.0;
    for (double v : p) z += v;
    for (double& v : p) v /= z;
    const auto a = select_action(p, SelectMode::kSample, rng);
    append_row(rows, t->next_state, t->next_tokens[a]);
    live.push_back(i);
    entropy.push_back(cfg.beta * lp.values()[a]);
  }
  if (live.empty()) return out;
  const auto x = rows_tensor(std::move(rows));
  const auto qr = min_of(nets.reward_targets, x);
  const auto qc = min_of(nets.cost_targets, x);
  for (std::size_t k = 0; k < live.size(); ++k) {
    const auto i = live[k];
    out.reward[i] += cfg.gamma * (qr[k] - entropy[k]);
    out.cost[i] += cfg.gamma * qc[k];
  }
  return out;
}

std::array<double, 4> critic_losses(std::span<const Transition* const> batch,
                                    const Nets& nets, const Targets& targets) {
  if (batch.empty()) throw Error(Errc::kEmptyInput, "empty batch");
  const auto x = chosen_rows(batch);
  const auto yr = nn::Tensor::constant(batch.size(), 1, targets.reward);
  const auto yc = nn::Tensor::constant(batch.size(), 1, targets.cost);
  const std::array<const CriticNet*, 4> nets4{&nets.reward_critics[0], &nets.reward_critics[1],
                                              &nets.cost_critics[0], &nets.cost_critics[1]};
  std::array<double, 4> out{};
  std::vector<nn::Tensor> terms;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto& y = j < 2 ? yr : yc;
    auto loss = nn::mean(nn::square(nn::sub(nets4[j]->forward(x), y)));
    out[j] = loss.item();
    terms.push_back(std::move(loss));
  }
  // The four parameter sets are disjoint, so one sweep yields each critic's
  // own gradient.
  nn::backward(nn::add_n(terms));
  return out;
}

double actor_loss_backward(std::span<const Transition* const> batch, const Nets& nets,
                           const TrainingConfig& cfg) {
  if (batch.empty()) throw Error(Errc::kEmptyInput, "empty batch");
  // Critic values for every candidate of every transition, in one pass.
  std::vector<double> m;
  {
    nn::NoGradGuard ng;
    std::vector<double> rows;
    for (const auto* t : batch) {
      for (const auto& tok : t->tokens) append_row(rows, t->state, tok);
    }
    const auto x = rows_tensor(std::move(rows));
    const auto r1 = column(nets.reward_critics[0].forward(x));
    const auto r2 = column(nets.reward_critics[1].forward(x));
    const auto c1 = column(nets.cost_critics[0].forward(x));
    const auto c2 = column(nets.cost_critics[1].forward(x));
    m.resize(r1.size());
    for (std::size_t k = 0; k < m.size(); ++k) {
      m[k] = std::min(r1[k] - nets.lambda * c1[k], r2[k] - nets.lambda * c2[k]);
    }
  }
  std::vector<nn::Tensor> terms;
  terms.reserve(batch.size());
  std::size_t offset = 0;
  for (const auto* t : batch) {
    const std::size_t n = t->tokens.size();
    const auto q = nn::Tensor::constant(
        1, n, std::vector<double>(m.begin() + static_cast<std::ptrdiff_t>(offset),
                                  m.begin() + static_cast<std::ptrdiff_t>(offset + n)));
    offset += n;
    const auto lp = nets.actor.log_policy(t->state, t->tokens);
    const auto p = nn::exp(lp);
    terms.push_back(nn::sum(nn::mul(p, nn::sub(nn::scale(lp, cfg.beta), q))));
  }
  const auto loss = nn::scale(nn::add_n(terms), 1.0 / static_cast<double>(batch.size()));
  nn::backward(loss);
  return loss.item();
}

double cost_estimate(std::span<const Transition* const> batch, const Nets& nets) {
  if (batch.empty()) throw Error(Errc::kEmptyInput, "empty batch");
  nn::NoGradGuard ng;
  const auto qc = min_of(nets.cost_critics, chosen_rows(batch));
  double s = 0.0;
  for (double v : qc) s += v;
  return nets.scale() * s / static_cast<double>(qc.size());
}

double update_lambda(double lambda, double eta, double cost_est, double d) {
  return std::max(0.0, lambda + eta * (cost_est - d));
}

namespace {

std::vector<std::vector<double>> tokens_of(const std::vector<sim::ActionCandidate>& cands,
                                           const sim::FeatureScale& scale) {
  std::vector<std::vector<double>> out;
  out.reserve(cands.size());
  for (const auto& c : cands) out.push_back(sim::action_token(c, scale));
  return out;
}

class Optimizer {
 public:
  Optimizer(nn::ParamList params, double lr, OptimizerKind kind)
      : params_(params), lr_(lr), kind_(kind), adam_(std::move(params), lr) {}
  void zero() { nn::zero_grad(params_); }
  void step() {
    if (kind_ == OptimizerKind::kAdam) {
      adam_.step();
    } else {
      nn::sgd_step(params_, lr_);
    }
  }

 private:
  nn::ParamList params_;
  double lr_;
  OptimizerKind kind_;
  nn::Adam adam_;
};

}  // namespace

TrainResult train(const sim::EnvConfig& env, const TrainingConfig& cfg,
                  const CycleCallback& on_cycle) {
  validate(cfg);
  sim::validate(env);
  const double d = cfg.d_limit.value_or(env.d_limit);

  TrainResult res;
  res.nets = make_nets(cfg);
  Nets& nets = res.nets;

  Optimizer actor_opt(nets.actor.params(), cfg.lr_actor, cfg.optimizer);
  Optimizer critic_opt(gather({&nets.reward_critics[0], &nets.reward_critics[1],
                               &nets.cost_critics[0], &nets.cost_critics[1]}),
                       cfg.lr_critic, cfg.optimizer);
  ReplayStore replay(cfg.replay_capacity, mix_seed(cfg.seed, 4));
  Rng act_rng = make_rng(cfg.seed, 3);
  Rng target_rng = make_rng(cfg.seed, 5);

  std::size_t cycle = 0;
  while (res.episodes_run < cfg.total_episodes) {
    CycleStats st;
    st.cycle = cycle++;
    const std::size_t n_eps =
        std::min<std::size_t>(cfg.episodes_per_cycle, cfg.total_episodes - res.episodes_run);
    for (std::size_t e = 0; e < n_eps; ++e) {
      sim::Episode ep(env, mix_seed(cfg.seed, 100000 + res.episodes_run));
      auto cands = ep.candidates();
      auto state = sim::state_features(ep.state(), env);
      auto tokens = tokens_of(cands, env.scale);
      while (true) {
        const auto probs = policy(nets.actor, state, tokens);
        const auto a = select_action(probs, SelectMode::kSample, act_rng);
        const auto r = ep.step(cands[a].region_id);
        Transition t;
        t.state = std::move(state);
        t.tokens = std::move(tokens);
        t.action = a;
        t.reward = r.reward;
        t.cost = r.cost;
        t.done = r.done;
        if (!r.done) {
          cands = ep.candidates();
          state = sim::state_features(ep.state(), env);
          tokens = tokens_of(cands, env.scale);
          t.next_state = state;
          t.next_tokens = tokens;
        } else {
          t.next_state = sim::state_features(ep.state(), env);
          st.mean_reward += r.reward;
          st.mean_cost += r.cost;
          nets.scale_sum += std::abs(r.reward);
          ++nets.scale_count;
        }
        replay.push(std::move(t));
        if (r.done) break;
      }
      ++res.episodes_run;
    }
    st.episodes = n_eps;
    st.mean_reward /= static_cast<double>(n_eps);
    st.mean_cost /= static_cast<double>(n_eps);

    if (res.episodes_run >= cfg.warmup_episodes) {
      double aloss = 0.0;
      std::array<double, 4> closs{};
      for (std::size_t u = 0; u < cfg.updates_per_cycle; ++u) {
        const auto batch = replay.sample(cfg.batch_size);
        const auto targets = critic_targets(batch, nets, cfg, target_rng);
        critic_opt.zero();
        const auto cl = critic_losses(batch, nets, targets);
        critic_opt.step();
        actor_opt.zero();
        aloss += actor_loss_backward(batch, nets, cfg);
        actor_opt.step();
        nets.lambda = update_lambda(nets.lambda, cfg.eta_lambda, cost_estimate(batch, nets), d);
        for (std::size_t j = 0; j < 2; ++j) {
          nn::polyak_update(nets.reward_targets[j].params(), nets.reward_critics[j].params(),
                            cfg.tau);
          nn::polyak_update(nets.cost_targets[j].params(), nets.cost_critics[j].params(),
                            cfg.tau);
        }
        for (std::size_t j = 0; j < 4; ++j) closs[j] += cl[j];
      }
      if (cfg.updates_per_cycle > 0) {
        const double k = static_cast<double>(cfg.updates_per_cycle);
        st.actor_loss = aloss / k;
        for (std::size_t j = 0; j < 4; ++j) st.critic_losses[j] = closs[j] / k;
      }
    }
    st.lambda = nets.lambda;
    res.curves.push_back(st);
    if (on_cycle) on_cycle(st);
  }
  res.rng = act_rng;
  return res;
}

sim::Policy make_policy(const ActorNet& actor, const sim::EnvConfig& env, SelectMode mode,
                        std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(make_rng(seed, 6));
  return [&actor, &env, mode, rng](const sim::EpisodeState& st,
                                   const std::vector<sim::ActionCandidate>& cands) {
    const auto probs = policy(actor, sim::state_features(st, env), tokens_of(cands, env.scale));
    return cands[select_action(probs, mode, *rng)].region_id;
  };
}

void write_curves_csv(std::ostream& os, const std::vector<CycleStats>& curves) {
  os << "cycle,episodes,mean_reward,mean_cost,lambda,actor_loss,critic_loss_r1,"
        "critic_loss_r2,critic_loss_c1,critic_loss_c2\n";
  os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& c : curves) {
    os << c.cycle << ',' << c.episodes << ',' << c.mean_reward << ',' << c.mean_cost << ','
       << c.lambda << ',' << c.actor_loss;
    for (double v : c.critic_losses) os << ',' << v;
    os << '\n';
  }
}

namespace {

std::vector<const nn::ParamList*> all_params(const Nets& n) {
  return {&n.actor.params(),          &n.reward_critics[0].params(),
          &n.reward_critics[1].params(), &n.cost_critics[0].params(),
          &n.cost_critics[1].params(),  &n.reward_targets[0].params(),
          &n.reward_targets[1].params(), &n.cost_targets[0].params(),
          &n.cost_targets[1].params()};
}

}  // namespace

void save(const TrainResult& r, const TrainingConfig& c, std::ostream& os) {
  io::BinaryWriter w(os);
  w.magic("STASAC1");
  w.u32(1);
  for (double v : {c.gamma, c.beta, c.lambda_init, c.eta_lambda, c.tau, c.lr_actor,
                   c.lr_critic}) {
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(c.optimizer));
  for (std::size_t v : {c.episodes_per_cycle, c.updates_per_cycle, c.batch_size,
                        c.replay_capacity, c.total_episodes, c.warmup_episodes}) {
    w.u64(v);
  }
  w.u32(c.d_limit ? 1 : 0);
  w.f64(c.d_limit.value_or(0.0));
  for (std::size_t v : {c.encoder.input_dim, c.encoder.model_dim, c.encoder.n_heads,
                        c.encoder.n_layers, c.encoder.feedforward_dim, c.score_hidden,
                        c.critic_hidden}) {
    w.u64(v);
  }
  w.u64(c.seed);
  w.f64(r.nets.lambda);
  w.f64(r.nets.scale_sum);
  w.u64(r.nets.scale_count);
  w.u64(r.episodes_run);
  std::ostringstream rng_state;
  rng_state << r.rng;
  w.str(rng_state.str());
  for (const auto* p : all_params(r.nets)) nn::save_params(*p, os);
  if (!os) throw Error(Errc::kIo, "failed writing STASAC1 checkpoint");
}

LoadedAgent load(std::istream& is) {
  io::BinaryReader rd(is);
  rd.expect_magic("STASAC1");
  if (const auto v = rd.u32(); v != 1) {
    throw Error(Errc::kFormat, "unsupported STASAC1 version " + std::to_string(v));
  }
  LoadedAgent out;
  auto& c = out.cfg;
  for (double* v : {&c.gamma, &c.beta, &c.lambda_init, &c.eta_lambda, &c.tau, &c.lr_actor,
                    &c.lr_critic}) {
    *v = rd.f64();
  }
  const auto opt = rd.u32();
  if (opt > 1) throw Error(Errc::kFormat, "bad optimizer tag");
  c.optimizer = static_cast<OptimizerKind>(opt);
  for (std::size_t* v : {&c.episodes_per_cycle, &c.updates_per_cycle, &c.batch_size,
                         &c.replay_capacity, &c.total_episodes, &c.warmup_episodes}) {
    *v = rd.u64();
  }
  const bool has_d = rd.u32() != 0;
  const double d = rd.f64();
  if (has_d) c.d_limit = d;
  for (std::size_t* v : {&c.encoder.input_dim, &c.encoder.model_dim, &c.encoder.n_heads,
                         &c.encoder.n_layers, &c.encoder.feedforward_dim, &c.score_hidden,
                         &c.critic_hidden}) {
    *v = rd.u64();
  }
  c.seed = rd.u64();
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(Errc::kFormat, std::string("checkpoint config invalid: ") + e.what());
  }
  out.nets = make_nets(c);
  out.nets.lambda = rd.f64();
  out.nets.scale_sum = rd.f64();
  out.nets.scale_count = rd.u64();
  out.episodes_run = rd.u64();
  std::istringstream rng_state(rd.str());
  rng_state >> out.rng;
  if (!rng_state) throw Error(Errc::kFormat, "bad RNG state in STASAC1");
  for (const auto* p : all_params(out.nets)) nn::load_params(*p, is);
  return out;
}

}  // namespace epopr::agent
