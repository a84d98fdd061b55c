#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "dop/algo/common.hpp"
#include "dop/critic/decomposed_critic.hpp"
#include "dop/critic/joint_critic.hpp"

namespace dop::algo {

using critic::DecomposedCritic;
using critic::JointCritic;
using critic::Params;

struct Transition {
  Vector state;
  std::vector<Vector> inputs;  // per-agent observation windows
  JointContinuous actions;
  double reward = 0.0;
  Vector next_state;
  std::vector<Vector> next_inputs;
  bool terminated = false;
};

using TransitionBuffer = RingBuffer<Transition>;

inline Matrix stack_states(const std::vector<const Transition*>& batch, bool next) {
  Matrix s(batch.front()->state.size(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) s.col(b) = next ? batch[b]->next_state : batch[b]->state;
  return s;
}

inline Matrix stack_inputs(const std::vector<const Transition*>& batch, int agent, bool next) {
  const auto& first = next ? batch.front()->next_inputs : batch.front()->inputs;
  Matrix x(first[agent].size(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) x.col(b) = (next ? batch[b]->next_inputs : batch[b]->inputs)[agent];
  return x;
}

// Joint actions of the (online or target) actors at every sample.
inline std::vector<JointContinuous> actor_joint_actions(const std::vector<const Transition*>& batch,
                                                        const DeterministicPolicySet& actors, bool next,
                                                        bool target) {
  std::vector<JointContinuous> out(batch.size(), JointContinuous(actors.n_agents()));
  for (int i = 0; i < actors.n_agents(); ++i) {
    const Matrix a = actors.actions(i, stack_inputs(batch, i, next), target);
    for (std::size_t b = 0; b < batch.size(); ++b) out[b][i] = a.col(b);
  }
  return out;
}

inline std::vector<JointContinuous> buffered_actions(const std::vector<const Transition*>& batch) {
  std::vector<JointContinuous> out;
  for (const auto* t : batch) out.push_back(t->actions);
  return out;
}

struct TdLoss {
  double loss = 0.0;
  double k_spread = 0.0;
};

// y = r + gamma * Q'_tot(s', mu'(tau')), with the bootstrap dropped on
// terminal transitions.
inline std::vector<double> det_targets(const std::vector<const Transition*>& batch, const DecomposedCritic& critic,
                                       const DeterministicPolicySet& actors, double gamma) {
  const auto next_a = actor_joint_actions(batch, actors, true, true);
  const auto next = critic.forward(stack_states(batch, true), next_a, Params::Target);
  std::vector<double> y;
  for (std::size_t b = 0; b < batch.size(); ++b)
    y.push_back(batch[b]->reward + (batch[b]->terminated ? 0.0 : gamma * next.q_tot[b]));
  return y;
}

inline std::vector<double> det_targets(const std::vector<const Transition*>& batch, const JointCritic& critic,
                                       const DeterministicPolicySet& actors, double gamma) {
  const auto next_a = actor_joint_actions(batch, actors, true, true);
  const RowVector q = critic.q_tot(stack_states(batch, true), next_a, Params::Target);
  std::vector<double> y;
  for (std::size_t b = 0; b < batch.size(); ++b)
    y.push_back(batch[b]->reward + (batch[b]->terminated ? 0.0 : gamma * q[b]));
  return y;
}

// L = mean (y - Q_tot(s, a))^2 and one optimiser step.
inline TdLoss det_critic_update(DecomposedCritic& critic, nn::RmsProp& opt,
                                const std::vector<const Transition*>& batch, const DeterministicPolicySet& actors,
                                double gamma, bool apply = true) {
  if (batch.empty()) throw StateError("critic update needs a non-empty batch");
  const auto y = det_targets(batch, critic, actors, gamma);
  const auto pass = critic.forward(stack_states(batch, false), buffered_actions(batch));
  const double B = static_cast<double>(batch.size());
  TdLoss out;
  RowVector dq(pass.batch);
  for (int b = 0; b < pass.batch; ++b) {
    const double err = y[b] - pass.q_tot[b];
    out.loss += err * err / B;
    dq[b] = -2.0 * err / B;
    out.k_spread += (pass.k.col(b).maxCoeff() - pass.k.col(b).minCoeff()) / B;
  }
  if (apply) {
    auto refs = critic.param_refs();
    opt.step(refs, critic.backward(pass, dq));
  }
  return out;
}

inline TdLoss det_critic_update(JointCritic& critic, nn::RmsProp& opt, const std::vector<const Transition*>& batch,
                                const DeterministicPolicySet& actors, double gamma, bool apply = true) {
  if (batch.empty()) throw StateError("critic update needs a non-empty batch");
  const auto y = det_targets(batch, critic, actors, gamma);
  const auto pass = critic.forward(critic.encode(stack_states(batch, false), buffered_actions(batch)));
  const double B = static_cast<double>(batch.size());
  TdLoss out;
  Matrix dq(1, pass.out.cols());
  for (Eigen::Index b = 0; b < pass.out.cols(); ++b) {
    const double err = y[b] - pass.out(0, b);
    out.loss += err * err / B;
    dq(0, b) = -2.0 * err / B;
  }
  if (apply) {
    auto refs = critic.param_refs();
    opt.step(refs, critic.backward(pass, dq).params);
  }
  return out;
}

// d Q / d a_i at a = mu(tau) for every agent: k_i dQ_i/da_i for the
// decomposed critic, dQ_tot/da_i for a joint critic. result[i] is
// action_dim x B.
inline std::vector<Matrix> policy_action_gradients(const std::vector<const Transition*>& batch,
                                                   const DecomposedCritic& critic,
                                                   const DeterministicPolicySet& actors) {
  const auto pass = critic.forward(stack_states(batch, false), actor_joint_actions(batch, actors, false, false));
  return critic.action_gradients(pass);
}

inline std::vector<Matrix> policy_action_gradients(const std::vector<const Transition*>& batch,
                                                   const JointCritic& critic, const DeterministicPolicySet& actors) {
  const auto pass =
      critic.forward(critic.encode(stack_states(batch, false), actor_joint_actions(batch, actors, false, false)));
  const auto bw = critic.backward(pass, Matrix::Ones(1, pass.out.cols()));
  std::vector<Matrix> out;
  for (int i = 0; i < actors.n_agents(); ++i) out.push_back(critic.action_input_grad(bw, i));
  return out;
}

// g_i = mean_b grad_theta mu_i(tau_i) . grad_{a_i} Q |_{a = mu(tau)}
template <typename Critic>
std::vector<Grad> det_actor_gradient(const std::vector<const Transition*>& batch, const Critic& critic,
                                     const DeterministicPolicySet& actors) {
  if (batch.empty()) throw StateError("actor gradient needs a non-empty batch");
  const auto ga = policy_action_gradients(batch, critic, actors);
  std::vector<Grad> out;
  const double B = static_cast<double>(batch.size());
  for (int i = 0; i < actors.n_agents(); ++i) out.push_back(actors.action_backward(i, stack_inputs(batch, i, false), ga[i] / B));
  return out;
}

struct DeterministicConfig {
  double critic_lr = 5e-3;
  double actor_lr = 5e-3;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  std::size_t capacity = 10000;
  int batch = 1250;
  long warmup_steps = 1000;
  double noise_sigma = 0.1;
  int policy_delay = 2;
  double tau = 0.01;
  // Environment steps between gradient updates.
  int train_every = 1;
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> actor_hidden{64};
  int window = 1;
  bool per_agent_networks = false;
  bool normalize_mixing = true;
  bool joint_critic = false;  // MADDPG

  void validate() const {
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (policy_delay < 1) throw ConfigError("policy_delay must be >= 1");
    if (train_every < 1) throw ConfigError("train_every must be >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
    if (window < 1) throw ConfigError("window must be >= 1");
  }
};

// Deterministic DOP (or, with joint_critic, continuous MADDPG): Gaussian
// exploration, a TD(0) critic step every train_every environment steps
// after warm-up, and actor plus soft target updates every policy_delay
// critic steps.
class DeterministicDop : public Trainer {
 public:
  DeterministicDop(const envs::Environment& env, DeterministicConfig cfg, RunSettings run)
      : cfg_(std::move(cfg)), run_(std::move(run)), seeds_(run_.seed), buffer_(cfg_.capacity) {
    cfg_.validate();
    const auto& spec = env.spec();
    if (spec.action_space.is_discrete()) throw ConfigError("deterministic training needs a continuous action space");
    env_ = env.clone();
    eval_env_ = env.clone();
    env_rng_ = seeds_.rng_for("env");
    explore_rng_ = seeds_.rng_for("explore");
    buffer_rng_ = seeds_.rng_for("buffer");
    eval_rng_ = seeds_.rng_for("eval");
    Rng init = seeds_.rng_for("init");
    if (cfg_.joint_critic) {
      critic::JointCriticConfig jc;
      jc.n_agents = spec.n_agents;
      jc.state_dim = spec.state_dim;
      jc.discrete = false;
      jc.action_dim = spec.action_space.dim;
      jc.hidden = cfg_.critic_hidden;
      joint_ = JointCritic(jc, init);
    } else {
      critic::CriticConfig cc;
      cc.n_agents = spec.n_agents;
      cc.state_dim = spec.state_dim;
      cc.discrete = false;
      cc.action_dim = spec.action_space.dim;
      cc.hidden = cfg_.critic_hidden;
      cc.per_agent_networks = cfg_.per_agent_networks;
      cc.normalize_mixing = cfg_.normalize_mixing;
      decomposed_ = DecomposedCritic(cc, init);
    }
    actors_ = DeterministicPolicySet(spec.n_agents, cfg_.window * spec.obs_dim, spec.action_space, cfg_.actor_hidden, init);
    critic_opt_ = nn::RmsProp({cfg_.critic_lr, cfg_.rms_alpha, cfg_.rms_eps});
    actor_opts_.assign(spec.n_agents, nn::RmsProp({cfg_.actor_lr, cfg_.rms_alpha, cfg_.rms_eps}));
    space_ = spec.action_space;
    gamma_ = spec.gamma;
  }

  const DeterministicConfig& config() const { return cfg_; }
  long steps() const override { return steps_; }
  long critic_updates() const { return critic_updates_; }
  const DeterministicPolicySet& actors() const { return actors_; }
  DeterministicPolicySet& actors() { return actors_; }
  const DecomposedCritic& decomposed_critic() const { return decomposed_; }
  DecomposedCritic& decomposed_critic() { return decomposed_; }
  const JointCritic& joint_critic() const { return joint_; }
  const TransitionBuffer& buffer() const { return buffer_; }

  // One environment step plus any due updates. Returns the episode return
  // when the step ended an episode.
  std::optional<double> step() {
    if (!in_episode_) begin_episode();
    const auto inputs = hist_->inputs();
    JointContinuous a;
    for (int i = 0; i < actors_.n_agents(); ++i) {
      Vector ai = actors_.action(i, inputs[i]);
      for (Eigen::Index d = 0; d < ai.size(); ++d)
        ai[d] = envs::clip(ai[d] + normal(explore_rng_, 0.0, cfg_.noise_sigma), space_.low[d], space_.high[d]);
      a.push_back(std::move(ai));
    }
    const Vector state = last_.state;
    last_ = env_->step(a);
    hist_->push(last_.observations);
    ++steps_;
    episode_return_ += last_.reward;
    buffer_.push(Transition{state, inputs, a, last_.reward, last_.state, hist_->inputs(), last_.terminated});

    if (steps_ > cfg_.warmup_steps && steps_ % cfg_.train_every == 0) update();

    if (last_.done()) {
      in_episode_ = false;
      return episode_return_;
    }
    return std::nullopt;
  }

  void update() {
    const auto batch = buffer_.sample(cfg_.batch, buffer_rng_);
    last_loss_ = cfg_.joint_critic ? det_critic_update(joint_, critic_opt_, batch, actors_, gamma_)
                                   : det_critic_update(decomposed_, critic_opt_, batch, actors_, gamma_);
    require_finite(last_loss_.loss, "critic loss", steps_);
    ++critic_updates_;
    if (critic_updates_ % cfg_.policy_delay == 0) {
      const auto g = cfg_.joint_critic ? det_actor_gradient(batch, joint_, actors_)
                                       : det_actor_gradient(batch, decomposed_, actors_);
      for (int i = 0; i < actors_.n_agents(); ++i) {
        if (!g[i].all_finite()) throw TrainingError("non-finite actor gradient", steps_);
        actor_opts_[i].step(actors_.net(i).params(), -1.0 * g[i]);
      }
      actors_.soft_update_target(cfg_.tau);
      if (cfg_.joint_critic)
        joint_.soft_update_target(cfg_.tau);
      else
        decomposed_.soft_update_target(cfg_.tau);
    }
  }

  void run(const MetricSink& sink) override {
    MetricClock clock(run_.metric_period);
    WallClock wall;
    while (steps_ < run_.total_steps) {
      if (auto r = step()) clock.add_return(*r);
      if (clock.due(steps_) || steps_ >= run_.total_steps) {
        clock.advance(steps_);
        MetricRecord rec;
        rec.run_id = run_.run_id;
        rec.seed = run_.seed;
        rec.step = steps_;
        rec.train_return = clock.take_return();
        rec.eval_return = greedy_return();
        if (critic_updates_ > 0) {
          rec.loss_td = last_loss_.loss;
          if (!cfg_.joint_critic) rec.k_spread = last_loss_.k_spread;
        }
        if (run_.record_wall_clock) rec.wall_clock = wall.seconds();
        sink(rec);
      }
    }
  }

  // Noise-free episode with the online actors; the visited transitions
  // are returned through `visited` when given.
  double greedy_return(std::vector<Transition>* visited = nullptr) {
    double total = 0.0;
    for (int e = 0; e < std::max(1, run_.eval_episodes); ++e) {
      auto res = eval_env_->reset(eval_rng_);
      ObservationHistory h(actors_.n_agents(), cfg_.window);
      h.reset(res.observations);
      for (int t = 0; t < eval_env_->spec().episode_limit; ++t) {
        const auto in = h.inputs();
        JointContinuous a;
        for (int i = 0; i < actors_.n_agents(); ++i) a.push_back(actors_.action(i, in[i]));
        const Vector s = res.state;
        res = eval_env_->step(a);
        h.push(res.observations);
        total += res.reward;
        if (visited) visited->push_back(Transition{s, in, a, res.reward, res.state, h.inputs(), res.terminated});
        if (res.done()) break;
      }
    }
    return total / std::max(1, run_.eval_episodes);
  }

  // Mean over the states of a greedy episode of dQ/da_i at a = mu(tau):
  // k_i dQ_i/da_i for DOP, dQ_tot/da_i for the joint critic.
  std::vector<Vector> credit_directions() {
    std::vector<Transition> visited;
    greedy_return(&visited);
    std::vector<const Transition*> batch;
    for (const auto& t : visited) batch.push_back(&t);
    const auto g = cfg_.joint_critic ? policy_action_gradients(batch, joint_, actors_)
                                     : policy_action_gradients(batch, decomposed_, actors_);
    std::vector<Vector> out;
    for (const auto& gi : g) out.push_back(gi.rowwise().mean());
    return out;
  }

 private:
  void begin_episode() {
    last_ = env_->reset(env_rng_);
    hist_.emplace(actors_.n_agents(), cfg_.window);
    hist_->reset(last_.observations);
    episode_return_ = 0.0;
    in_episode_ = true;
  }

  DeterministicConfig cfg_;
  RunSettings run_;
  SeedTree seeds_;
  std::unique_ptr<envs::Environment> env_, eval_env_;
  Rng env_rng_, explore_rng_, buffer_rng_, eval_rng_;
  DecomposedCritic decomposed_;
  JointCritic joint_;
  DeterministicPolicySet actors_;
  nn::RmsProp critic_opt_;
  std::vector<nn::RmsProp> actor_opts_;
  TransitionBuffer buffer_;
  envs::ActionSpace space_;
  double gamma_ = 0.99;
  long steps_ = 0, critic_updates_ = 0;
  bool in_episode_ = false;
  envs::StepResult last_;
  std::optional<ObservationHistory> hist_;
  double episode_return_ = 0.0;
  TdLoss last_loss_{};
};

}  // namespace dop::algo
