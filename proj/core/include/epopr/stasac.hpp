#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "epopr/nnet.hpp"
#include "epopr/random.hpp"
#include "epopr/simenv.hpp"

namespace epopr::agent {

// Attention actor: a set encoder over the candidate tokens, a state
// projection forming the query, and an additive scoring head
// score_i = v . tanh(W [key_i, query]).
class ActorNet {
 public:
  ActorNet() = default;
  ActorNet(const nn::EncoderConfig& enc, std::size_t score_hidden, Rng& rng);

  // Log-probabilities over candidates (1 x n), in candidate order.
  nn::Tensor log_policy(std::span<const double> state,
                        const std::vector<std::vector<double>>& tokens) const;
  // Unnormalized scores (1 x n).
  nn::Tensor scores(std::span<const double> state,
                    const std::vector<std::vector<double>>& tokens) const;

  const nn::ParamList& params() const { return params_; }
  nn::Tensor& score_vector() { return v_a_; }
  const nn::EncoderConfig& encoder_config() const { return encoder_.config(); }
  std::size_t score_hidden() const { return w_a_.cols(); }

 private:
  nn::SetEncoder encoder_;
  nn::Linear state_proj_;
  nn::Tensor w_a_;  // (2 d + token_dim + d) x h
  nn::Tensor v_a_;  // h x 1
  nn::ParamList params_;
};

// Q(s, a): state features concatenated with the chosen action's token.
class CriticNet {
 public:
  CriticNet() = default;
  CriticNet(std::size_t hidden, Rng& rng);

  // rows: m x (state_dim + token_dim) -> m x 1
  nn::Tensor forward(const nn::Tensor& rows) const;
  const nn::ParamList& params() const { return params_; }

 private:
  nn::Mlp mlp_;
  nn::ParamList params_;
};

enum class OptimizerKind { kSgd, kAdam };

struct TrainingConfig {
  double gamma = 1.0;
  double beta = 0.05;
  double lambda_init = 0.0;
  double eta_lambda = 0.01;
  double tau = 0.01;
  double lr_actor = 3e-4;
  double lr_critic = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t episodes_per_cycle = 10;   // M
  std::size_t updates_per_cycle = 4;
  std::size_t batch_size = 256;
  std::size_t replay_capacity = 100000;
  std::size_t total_episodes = 3000;
  std::size_t warmup_episodes = 20;     // collected before the first update
  std::optional<double> d_limit;         // defaults to the environment's
  nn::EncoderConfig encoder{};
  std::size_t score_hidden = 32;
  std::size_t critic_hidden = 64;
  std::uint64_t seed = 0;
};

// Throws Error(kInvalidConfig).
void validate(const TrainingConfig& cfg);

struct Transition {
  std::vector<double> state;
  std::vector<std::vector<double>> tokens;  // candidate snapshot
  std::size_t action = 0;                    // index into tokens
  double reward = 0.0;                       // raw hours
  double cost = 0.0;
  std::vector<double> next_state;
  std::vector<std::vector<double>> next_tokens;  // empty when done
  bool done = false;
};

class ReplayStore {
 public:
  ReplayStore(std::size_t capacity, std::uint64_t seed);
  void push(Transition t);  // evicts the oldest at capacity
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i]; }
  // Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t n);

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
  Rng rng_;
};

enum class SelectMode { kSample, kGreedy };

// Greedy: argmax, lowest index on ties. Throws kInvalidDistribution unless
// the entries are non-negative and sum to 1 within 1e-6.
std::size_t select_action(std::span<const double> probs, SelectMode mode, Rng& rng);

struct Nets {
  ActorNet actor;
  std::array<CriticNet, 2> reward_critics;
  std::array<CriticNet, 2> cost_critics;
  std::array<CriticNet, 2> reward_targets;
  std::array<CriticNet, 2> cost_targets;
  double lambda = 0.0;
  // Running mean of |terminal reward|, the shared divisor for rewards and
  // costs before regression.
  double scale_sum = 0.0;
  std::uint64_t scale_count = 0;

  double scale() const;
};

Nets make_nets(const TrainingConfig& cfg);

// Probability of each candidate under the actor.
std::vector<double> policy(const ActorNet& actor, std::span<const double> state,
                           const std::vector<std::vector<double>>& tokens);

struct Targets {
  std::vector<double> reward;  // normalized units
  std::vector<double> cost;
};

// Regression targets for a batch. Next actions are drawn from the current
// actor with `rng`.
Targets critic_targets(std::span<const Transition* const> batch, const Nets& nets,
                       const TrainingConfig& cfg, Rng& rng);

// Mean squared error of each critic against its target; gradients land on
// the critic parameters. Returns the four loss values (r1, r2, c1, c2).
std::array<double, 4> critic_losses(std::span<const Transition* const> batch,
                                    const Nets& nets, const Targets& targets);

// Builds the actor objective for a batch, back-propagates it into the
// actor parameters only, and returns its value.
double actor_loss_backward(std::span<const Transition* const> batch, const Nets& nets,
                           const TrainingConfig& cfg);

// min_j Q_cj(s, a) over the batch, in raw hours.
double cost_estimate(std::span<const Transition* const> batch, const Nets& nets);

double update_lambda(double lambda, double eta, double cost_estimate, double d);

struct CycleStats {
  std::size_t cycle = 0;
  std::size_t episodes = 0;
  double mean_reward = 0.0;
  double mean_cost = 0.0;
  double lambda = 0.0;
  double actor_loss = 0.0;
  std::array<double, 4> critic_losses{};
};

struct TrainResult {
  Nets nets;
  std::vector<CycleStats> curves;
  std::uint64_t episodes_run = 0;
  Rng rng;  // action-sampling stream cursor at the end of training
};

using CycleCallback = std::function<void(const CycleStats&)>;

TrainResult train(const sim::EnvConfig& env, const TrainingConfig& cfg,
                  const CycleCallback& on_cycle = {});

// Wraps the actor as an environment policy; `actor` and `env` must outlive
// it. Sample mode draws from `seed`.
sim::Policy make_policy(const ActorNet& actor, const sim::EnvConfig& env,
                        SelectMode mode, std::uint64_t seed = 0);

void write_curves_csv(std::ostream& os, const std::vector<CycleStats>& curves);

// Checkpoint "STASAC1": training config, lambda, scale, RNG cursor and the
// nine parameter sets (actor, four critics, four targets).
void save(const TrainResult& r, const TrainingConfig& cfg, std::ostream& os);
struct LoadedAgent {
  TrainingConfig cfg;
  Nets nets;
  std::uint64_t episodes_run = 0;
  Rng rng;
};
LoadedAgent load(std::istream& is);

}  // namespace epopr::agent
