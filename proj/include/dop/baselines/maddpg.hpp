#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dop/algo/common.hpp"
#include "dop/algo/deterministic.hpp"
#include "dop/analysis/variance.hpp"
#include "dop/critic/joint_critic.hpp"

namespace dop::baselines {

using algo::MetricRecord;
using algo::MetricSink;
using critic::JointCritic;
using critic::Params;
using nn::Grad;

inline double sample_gumbel(Rng& rng) {
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  return -std::log(-std::log(u));
}

inline Vector softmax_tempered(const Vector& z, double temperature) {
  const Vector s = (z.array() - z.maxCoeff()) / temperature;
  const Vector e = s.array().exp();
  return e / e.sum();
}

// Gumbel perturbation g (unconditional): z = log pi + g.
inline Vector gumbel_noise(int size, Rng& rng) {
  Vector g(size);
  for (int a = 0; a < size; ++a) g[a] = sample_gumbel(rng);
  return g;
}

// Gumbel perturbation conditioned on argmax(log pi + g) = k (top-down
// construction): the max is Gumbel(logsumexp) and the rest are Gumbels
// truncated below it.
inline Vector gumbel_noise_given_argmax(const Vector& log_pi, int k, Rng& rng) {
  const double m = log_pi.maxCoeff();
  const double lse = m + std::log((log_pi.array() - m).exp().sum());
  Vector z(log_pi.size());
  z[k] = lse + sample_gumbel(rng);
  for (Eigen::Index j = 0; j < log_pi.size(); ++j) {
    if (j == k) continue;
    const double free = log_pi[j] + sample_gumbel(rng);
    z[j] = -std::log(std::exp(-z[k]) + std::exp(-free));
  }
  return z - log_pi;
}

inline Vector safe_log(const Vector& p) {
  return p.array().max(std::numeric_limits<double>::min()).log();
}

// Relaxed one-hot softmax((log pi + g) / T).
inline Vector gumbel_softmax(const Vector& pi, const Vector& noise, double temperature) {
  return softmax_tempered(safe_log(pi) + noise, temperature);
}

// Upstream at the policy logits for d(u . y)/d logits, y = softmax((l + g)/T).
inline Vector gumbel_softmax_backward(const Vector& y, const Vector& u, double temperature) {
  return (y.array() * (u.array() - y.dot(u))).matrix() / temperature;
}

struct DiscreteTransition {
  Vector state;
  std::vector<Vector> inputs;
  JointDiscrete actions;
  double reward = 0.0;
  Vector next_state;
  std::vector<Vector> next_inputs;
  bool terminated = false;
};

struct MaddpgConfig {
  double critic_lr = 5e-4;
  double actor_lr = 5e-4;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  std::size_t capacity = 5000;
  int batch = 32;
  double tau = 0.01;
  int policy_delay = 1;
  double temperature = 1.0;
  bool straight_through = false;
  algo::EpsilonSchedule epsilon{};
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> actor_hidden{64};
  int window = 1;
  int collectors = 1;
  long actor_warmup_steps = 0;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (batch < 1 || policy_delay < 1 || window < 1 || collectors < 1)
      throw ConfigError("MADDPG: batch, delay, window and collectors must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  }
};

// MADDPG on discrete actions: softmax policies are relaxed with
// Gumbel-softmax and trained through a scalar joint critic; episodes are
// collected with the epsilon mixture like the other discrete trainers.
class MaddpgDiscrete : public algo::Trainer {
 public:
  MaddpgDiscrete(const envs::Environment& env, MaddpgConfig cfg, algo::RunSettings run)
      : cfg_(std::move(cfg)), run_(std::move(run)), seeds_(run_.seed), buffer_(cfg_.capacity) {
    cfg_.validate();
    const auto& spec = env.spec();
    if (!spec.action_space.is_discrete()) throw ConfigError("discrete MADDPG needs a discrete action space");
    for (int c = 0; c < cfg_.collectors; ++c) {
      envs_.push_back(env.clone());
      env_rngs_.push_back(seeds_.rng_for("env", c));
    }
    eval_env_ = env.clone();
    explore_rng_ = seeds_.rng_for("explore");
    buffer_rng_ = seeds_.rng_for("buffer");
    gumbel_rng_ = seeds_.rng_for("gumbel");
    eval_rng_ = seeds_.rng_for("eval");
    probe_rng_ = seeds_.rng_for("probe");
    Rng init = seeds_.rng_for("init");
    critic::JointCriticConfig jc;
    jc.n_agents = spec.n_agents;
    jc.state_dim = spec.state_dim;
    jc.discrete = true;
    jc.n_actions = spec.action_space.size;
    jc.hidden = cfg_.critic_hidden;
    critic_ = JointCritic(jc, init);
    policies_ = algo::StochasticPolicySet(spec.n_agents, cfg_.window * spec.obs_dim, jc.n_actions, cfg_.actor_hidden, init);
    critic_opt_ = nn::RmsProp({cfg_.critic_lr, cfg_.rms_alpha, cfg_.rms_eps});
    actor_opts_.assign(spec.n_agents, nn::RmsProp({cfg_.actor_lr, cfg_.rms_alpha, cfg_.rms_eps}));
    target_nets_ = policies_.nets();
    gamma_ = spec.gamma;
  }

  long steps() const override { return steps_; }
  const JointCritic& critic() const { return critic_; }
  const algo::StochasticPolicySet& policies() const { return policies_; }
  const std::vector<analysis::GradientVarianceReport>& variance_log() const { return variance_log_; }

  std::vector<double> iterate() {
    std::vector<double> returns;
    const double eps = cfg_.epsilon.at(steps_);
    for (int c = 0; c < cfg_.collectors; ++c) {
      auto ep = algo::rollout_discrete(*envs_[c], env_rngs_[c], cfg_.window, [&](const std::vector<Vector>& in) {
        return algo::act(policies_, in, eps, explore_rng_);
      });
      steps_ += ep.length();
      returns.push_back(ep.total_reward());
      store(ep);
    }
    critic_step();
    if (++critic_updates_ % cfg_.policy_delay == 0 && steps_ > cfg_.actor_warmup_steps) {
      actor_step();
      for (int i = 0; i < policies_.n_agents(); ++i)
        nn::soft_update(target_nets_[i].params(), policies_.net(i).params(), cfg_.tau);
      critic_.soft_update_target(cfg_.tau);
    }
    return returns;
  }

  void run(const MetricSink& sink) override {
    algo::MetricClock clock(run_.metric_period);
    algo::WallClock wall;
    while (steps_ < run_.total_steps) {
      for (double r : iterate()) clock.add_return(r);
      if (clock.due(steps_) || steps_ >= run_.total_steps) {
        clock.advance(steps_);
        MetricRecord rec;
        rec.run_id = run_.run_id;
        rec.seed = run_.seed;
        rec.step = steps_;
        rec.train_return = clock.take_return();
        rec.eval_return = greedy_return();
        rec.loss_td = last_loss_;
        if (run_.variance_samples > 0) {
          auto rep = probe_variance(run_.variance_samples);
          if (rep.reportable()) rec.grad_variance = rep.mean();
          variance_log_.push_back(std::move(rep));
        }
        rec.bias = bias();
        if (run_.record_wall_clock) rec.wall_clock = wall.seconds();
        sink(rec);
      }
    }
  }

  double greedy_return() {
    double acc = 0.0;
    const int E = std::max(1, run_.eval_episodes);
    for (int e = 0; e < E; ++e) {
      auto ep = algo::rollout_discrete(*eval_env_, eval_rng_, cfg_.window, [&](const std::vector<Vector>& in) {
        algo::ActResult r;
        r.actions = algo::greedy_actions(policies_, in);
        r.behavior_probs.assign(r.actions.size(), 1.0);
        return r;
      });
      acc += ep.total_reward();
    }
    return acc / E;
  }

  std::pair<Vector, std::vector<Vector>> probe_point() const {
    auto env = eval_env_->clone();
    Rng r = seeds_.rng_for("probe_state");
    const auto res = env->reset(r);
    algo::ObservationHistory h(env->spec().n_agents, cfg_.window);
    h.reset(res.observations);
    return {res.state, h.inputs()};
  }

  // Per-sample MADDPG gradient for agent i: the relaxed action is drawn
  // with Gumbel noise conditioned on its argmax being a_i, the others play
  // one-hot actions from their behaviour mixture, and the critic's action gradient is pushed
  // through the relaxation into theta_i.
  analysis::GradientVarianceReport probe_variance(int samples) {
    const auto [s, in] = probe_point();
    const int n = policies_.n_agents();
    std::vector<Vector> pi;
    for (int i = 0; i < n; ++i) pi.push_back(policies_.probs(i, in[i]));
    // Other agents act from the exploration mixture that generates actor batches.
    std::vector<Vector> beta;
    for (const auto& p : pi) beta.push_back(algo::epsilon_mixture(p, cfg_.epsilon.at(steps_)));
    const Vector state = s;
    const auto inputs = in;
    auto sampler = [&](int i, int a, Rng& rng) -> Vector {
      JointContinuous enc(n);
      for (int j = 0; j < n; ++j)
        if (j != i) enc[j] = critic::one_hot(sample_categorical(rng, beta[j]), policies_.n_actions());
      const Vector noise = gumbel_noise_given_argmax(safe_log(pi[i]), a, rng);
      return relaxed_gradient(i, state, inputs[i], enc, noise).flatten();
    };
    auto rep = analysis::gradient_variance(pi, sampler, samples, probe_rng_);
    rep.step = steps_;
    return rep;
  }

  std::optional<double> bias() const {
    const auto truth = algo::truth_table(*eval_env_);
    if (!truth) return std::nullopt;
    const auto [s, in] = probe_point();
    const int n = critic_.n_agents(), A = critic_.config().n_actions;
    const long J = truth->size();
    std::vector<JointDiscrete> all;
    for (long j = 0; j < J; ++j) all.push_back(envs::unflatten_joint(j, n, A));
    const RowVector q = critic_.q_tot(s.replicate(1, J), all);
    return (q.transpose() - *truth).cwiseAbs().mean();
  }

 private:
  void store(const envs::Episode& ep) {
    for (int t = 0; t < ep.length(); ++t) {
      DiscreteTransition tr;
      tr.state = ep.steps[t].state;
      tr.actions = ep.steps[t].actions;
      tr.reward = ep.steps[t].reward;
      tr.next_state = (t + 1 < ep.length()) ? ep.steps[t + 1].state : ep.final_state;
      tr.terminated = (t + 1 == ep.length()) && ep.terminated;
      for (int i = 0; i < policies_.n_agents(); ++i) {
        tr.inputs.push_back(algo::episode_window(ep, t, i, cfg_.window));
        tr.next_inputs.push_back(algo::episode_window(ep, t + 1, i, cfg_.window));
      }
      buffer_.push(std::move(tr));
    }
  }

  Vector relaxed(const Vector& pi, const Vector& noise) const {
    Vector y = gumbel_softmax(pi, noise, cfg_.temperature);
    if (!cfg_.straight_through) return y;
    Eigen::Index k;
    y.maxCoeff(&k);
    return critic::one_hot(static_cast<int>(k), static_cast<int>(y.size()));
  }

  // grad_theta_i Q(s, (enc_-i, y_i)) with y_i = GS(pi_i, noise); others fixed.
  Grad relaxed_gradient(int i, const Vector& state, const Vector& input, JointContinuous enc, const Vector& noise) const {
    nn::Tape tape;
    const Vector p = policies_.net(i).forward(Matrix(input), tape).col(0);
    const Vector y = gumbel_softmax(p, noise, cfg_.temperature);
    enc[i] = cfg_.straight_through ? relaxed(p, noise) : y;
    const auto pass = critic_.forward(critic_.encode(Matrix(state), std::vector<JointContinuous>{enc}));
    const auto bw = critic_.backward(pass, Matrix::Ones(1, 1));
    const Vector u = critic_.action_input_grad(bw, i).col(0);
    const Matrix up = gumbel_softmax_backward(y, u, cfg_.temperature);
    return policies_.net(i).backward(tape, up, nn::UpstreamAt::PreActivation).params;
  }

  void critic_step() {
    const auto batch = buffer_.sample(cfg_.batch, buffer_rng_);
    const int n = policies_.n_agents(), B = static_cast<int>(batch.size());
    Matrix s(batch.front()->state.size(), B), s2(batch.front()->state.size(), B);
    std::vector<JointContinuous> now, next(B, JointContinuous(n));
    for (int b = 0; b < B; ++b) {
      s.col(b) = batch[b]->state;
      s2.col(b) = batch[b]->next_state;
      now.push_back(critic::one_hot_joint(batch[b]->actions, policies_.n_actions()));
    }
    for (int i = 0; i < n; ++i) {
      Matrix x(policies_.input_dim(), B);
      for (int b = 0; b < B; ++b) x.col(b) = batch[b]->next_inputs[i];
      const Matrix p = target_nets_[i].forward(x);
      for (int b = 0; b < B; ++b) next[b][i] = relaxed(p.col(b), gumbel_noise(policies_.n_actions(), gumbel_rng_));
    }
    const RowVector q2 = critic_.q_tot(s2, next, Params::Target);
    const auto pass = critic_.forward(critic_.encode(s, now));
    Matrix up(1, B);
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
      const double y = batch[b]->reward + (batch[b]->terminated ? 0.0 : gamma_ * q2[b]);
      const double err = y - pass.out(0, b);
      loss += err * err / B;
      up(0, b) = -2.0 * err / B;
    }
    algo::require_finite(loss, "critic loss", steps_);
    last_loss_ = loss;
    auto refs = critic_.param_refs();
    critic_opt_.step(refs, critic_.backward(pass, up).params);
  }

  void actor_step() {
    const auto batch = buffer_.sample(cfg_.batch, buffer_rng_);
    const int n = policies_.n_agents(), B = static_cast<int>(batch.size());
    for (int i = 0; i < n; ++i) {
      Grad g;
      for (int b = 0; b < B; ++b) {
        const auto enc = critic::one_hot_joint(batch[b]->actions, policies_.n_actions());
        Grad gb = relaxed_gradient(i, batch[b]->state, batch[b]->inputs[i], enc,
                                   gumbel_noise(policies_.n_actions(), gumbel_rng_));
        if (b == 0)
          g = std::move(gb);
        else
          g += gb;
      }
      g *= 1.0 / B;
      if (!g.all_finite()) throw TrainingError("non-finite actor gradient", steps_);
      actor_opts_[i].step(policies_.net(i).params(), -1.0 * g);
    }
  }

  MaddpgConfig cfg_;
  algo::RunSettings run_;
  SeedTree seeds_;
  std::vector<std::unique_ptr<envs::Environment>> envs_;
  std::vector<Rng> env_rngs_;
  std::unique_ptr<envs::Environment> eval_env_;
  Rng explore_rng_, buffer_rng_, gumbel_rng_, eval_rng_, probe_rng_;
  JointCritic critic_;
  algo::StochasticPolicySet policies_;
  std::vector<nn::Mlp> target_nets_;
  nn::RmsProp critic_opt_;
  std::vector<nn::RmsProp> actor_opts_;
  algo::RingBuffer<DiscreteTransition> buffer_;
  double gamma_ = 0.99;
  long steps_ = 0, critic_updates_ = 0;
  double last_loss_ = 0.0;
  std::vector<analysis::GradientVarianceReport> variance_log_;
};

// Continuous MADDPG: deterministic actors trained through a joint critic.
inline algo::DeterministicDop make_maddpg_continuous(const envs::Environment& env, algo::DeterministicConfig cfg,
                                                     algo::RunSettings run) {
  cfg.joint_critic = true;
  return algo::DeterministicDop(env, std::move(cfg), std::move(run));
}

}  // namespace dop::baselines
