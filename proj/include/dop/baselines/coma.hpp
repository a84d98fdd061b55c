#pragma once

#include <vector>

#include "dop/algo/common.hpp"
#include "dop/analysis/variance.hpp"
#include "dop/critic/joint_critic.hpp"

namespace dop::baselines {

using algo::MetricRecord;
using algo::MetricSink;
using critic::JointCritic;
using critic::Params;
using nn::Grad;

// A_i = Q(s, a) - sum_x pi_i(x) Q(s, (a_-i, x)) from one counterfactual pass
// (column `col` of `cf`, which holds Q(s, (a_-i, .)) for agent i).
inline double coma_advantage(const Matrix& cf, int col, int taken, const Vector& pi_i) {
  if (cf.rows() != pi_i.size()) throw ShapeError("coma_advantage: |Q| != |pi_i|");
  return cf(taken, col) - pi_i.dot(cf.col(col));
}

inline double coma_advantage(const JointCritic& critic, const Vector& state, const JointDiscrete& joint, int agent,
                             const Vector& pi_i, Params w = Params::Online) {
  if (!critic.config().discrete) throw UnsupportedError("coma_advantage needs discrete actions");
  const Matrix cf = critic.net(w).forward(critic.encode_counterfactual(Matrix(state), {joint}, agent));
  return coma_advantage(cf, 0, joint[agent], pi_i);
}

struct ComaConfig {
  double lambda = 0.8;
  int target_update_period = 200;
  int on_batch = 16;
  double critic_lr = 1e-4;
  double actor_lr = 5e-4;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  algo::EpsilonSchedule epsilon{};
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> actor_hidden{64};
  int window = 1;
  int collectors = 1;
  long actor_warmup_steps = 0;
  bool bootstrap_on_truncation = true;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (target_update_period < 1 || on_batch < 1 || window < 1 || collectors < 1)
      throw ConfigError("COMA: periods, batch, window and collectors must be positive");
  }
};

// COMA: on-policy actor-critic with a counterfactual joint critic trained
// by TD(lambda) and actors following A_i grad log pi_i.
class Coma : public algo::Trainer {
 public:
  Coma(const envs::Environment& env, ComaConfig cfg, algo::RunSettings run)
      : cfg_(std::move(cfg)), run_(std::move(run)), seeds_(run_.seed), on_(32) {
    cfg_.validate();
    const auto& spec = env.spec();
    if (!spec.action_space.is_discrete()) throw ConfigError("COMA needs a discrete action space");
    for (int c = 0; c < cfg_.collectors; ++c) {
      envs_.push_back(env.clone());
      env_rngs_.push_back(seeds_.rng_for("env", c));
    }
    eval_env_ = env.clone();
    explore_rng_ = seeds_.rng_for("explore");
    eval_rng_ = seeds_.rng_for("eval");
    probe_rng_ = seeds_.rng_for("probe");
    Rng init = seeds_.rng_for("init");
    critic::JointCriticConfig jc;
    jc.n_agents = spec.n_agents;
    jc.state_dim = spec.state_dim;
    jc.discrete = true;
    jc.n_actions = spec.action_space.size;
    jc.hidden = cfg_.critic_hidden;
    jc.mode = critic::JointMode::Counterfactual;
    critic_ = JointCritic(jc, init);
    policies_ = algo::StochasticPolicySet(spec.n_agents, cfg_.window * spec.obs_dim, jc.n_actions, cfg_.actor_hidden, init);
    critic_opt_ = nn::RmsProp({cfg_.critic_lr, cfg_.rms_alpha, cfg_.rms_eps});
    actor_opts_.assign(spec.n_agents, nn::RmsProp({cfg_.actor_lr, cfg_.rms_alpha, cfg_.rms_eps}));
    gamma_ = spec.gamma;
  }

  long steps() const override { return steps_; }
  const JointCritic& critic() const { return critic_; }
  const algo::StochasticPolicySet& policies() const { return policies_; }
  const std::vector<analysis::GradientVarianceReport>& variance_log() const { return variance_log_; }

  std::vector<double> iterate() {
    std::vector<double> returns;
    std::vector<const envs::Episode*> fresh;
    const double eps = cfg_.epsilon.at(steps_);
    for (int c = 0; c < cfg_.collectors; ++c) {
      envs::Episode ep = algo::rollout_discrete(*envs_[c], env_rngs_[c], cfg_.window, [&](const std::vector<Vector>& in) {
        return algo::act(policies_, in, eps, explore_rng_);
      });
      ep.policy_version = version_;
      steps_ += ep.length();
      returns.push_back(ep.total_reward());
      on_.push(std::move(ep));
    }
    last_loss_ = critic_step();
    algo::require_finite(last_loss_, "critic loss", steps_);
    if (steps_ > cfg_.actor_warmup_steps) actor_step();
    if (++iterations_ % cfg_.target_update_period == 0) {
      critic_.sync_target();
      policies_.sync_target();
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
        rec.loss_on = last_loss_;
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

  // Per-sample COMA gradient A_i grad log pi_i(a_i) with a_i fixed and
  // a_-i drawn from the behaviour mixture.
  analysis::GradientVarianceReport probe_variance(int samples) {
    const auto [s, in] = probe_point();
    const int n = policies_.n_agents(), A = policies_.n_actions();
    std::vector<Vector> pi;
    for (int i = 0; i < n; ++i) pi.push_back(policies_.probs(i, in[i]));
    // Other agents act from the exploration mixture that generates actor batches.
    std::vector<Vector> beta;
    for (const auto& p : pi) beta.push_back(algo::epsilon_mixture(p, cfg_.epsilon.at(steps_)));
    std::vector<std::vector<Vector>> score(n, std::vector<Vector>(A));
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < A; ++a)
        score[i][a] = policies_.log_prob_grad(i, Matrix(in[i]), {a}, RowVector::Ones(1)).flatten();
    const Vector state = s;
    auto sampler = [&](int i, int a, Rng& rng) -> Vector {
      JointDiscrete ja(n);
      for (int j = 0; j < n; ++j) ja[j] = (j == i) ? a : sample_categorical(rng, beta[j]);
      return coma_advantage(critic_, state, ja, i, pi[i]) * score[i][a];
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
    const Matrix states = s.replicate(1, J);
    const RowVector q = critic_.q_tot(states, all);
    return (q.transpose() - *truth).cwiseAbs().mean();
  }

 private:
  // TD(lambda) targets from the target critic on the latest episodes, one
  // regression term per agent view.
  double critic_step() {
    const auto batch = on_.latest(cfg_.on_batch);
    const int n = critic_.n_agents();
    std::vector<Vector> states;
    std::vector<JointDiscrete> acts;
    std::vector<double> y;
    for (const auto* ep : batch) {
      const int T = ep->length();
      Matrix s(ep->final_state.size(), T);
      std::vector<JointDiscrete> a;
      for (int t = 0; t < T; ++t) {
        s.col(t) = ep->steps[t].state;
        a.push_back(ep->steps[t].actions);
      }
      const RowVector q = critic_.q_tot(s, a, Params::Target);
      double end = 0.0;
      if (!ep->terminated && cfg_.bootstrap_on_truncation) {
        std::vector<Vector> pi;
        for (int i = 0; i < n; ++i) pi.push_back(policies_.probs(i, algo::episode_window(*ep, T, i, cfg_.window), true));
        end = expected_joint_q(ep->final_state, pi);
      }
      // Backward recursion of the lambda-return.
      double g = 0.0;
      std::vector<double> ys(T);
      for (int t = T - 1; t >= 0; --t) {
        const double next = (t + 1 < T) ? q[t + 1] : end;
        g = (t + 1 < T) ? ep->steps[t].reward + gamma_ * ((1.0 - cfg_.lambda) * next + cfg_.lambda * g)
                        : ep->steps[t].reward + gamma_ * end;
        ys[t] = g;
      }
      for (int t = 0; t < T; ++t) {
        states.push_back(s.col(t));
        acts.push_back(a[t]);
        y.push_back(ys[t]);
      }
    }
    const int B = static_cast<int>(y.size());
    Matrix S(states.front().size(), B);
    for (int b = 0; b < B; ++b) S.col(b) = states[b];
    Grad total;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto pass = critic_.forward(critic_.encode_counterfactual(S, acts, i));
      Matrix up = Matrix::Zero(pass.out.rows(), B);
      for (int b = 0; b < B; ++b) {
        const double err = y[b] - pass.out(acts[b][i], b);
        loss += err * err / (B * n);
        up(acts[b][i], b) = -2.0 * err / (B * n);
      }
      Grad g = critic_.backward(pass, up).params;
      if (i == 0)
        total = std::move(g);
      else
        total += g;
    }
    auto refs = critic_.param_refs();
    critic_opt_.step(refs, total);
    return loss;
  }

  // E_pi Q(s, .) by enumerating joint actions through the critic.
  double expected_joint_q(const Vector& s, const std::vector<Vector>& pi) const {
    const int n = critic_.n_agents(), A = critic_.config().n_actions;
    const long J = envs::joint_count(n, A);
    std::vector<JointDiscrete> all;
    for (long j = 0; j < J; ++j) all.push_back(envs::unflatten_joint(j, n, A));
    const RowVector q = critic_.q_tot(s.replicate(1, J), all, Params::Target);
    double acc = 0.0;
    for (long j = 0; j < J; ++j) {
      double p = 1.0;
      for (int i = 0; i < n; ++i) p *= pi[i][all[j][i]];
      acc += p * q[j];
    }
    return acc;
  }

  void actor_step() {
    std::vector<const envs::Episode*> batch;
    for (std::size_t k = 0; k < on_.size(); ++k)
      if (on_[k].policy_version == version_) batch.push_back(&on_[k]);
    if (batch.empty()) throw StateError("COMA actor step without fresh episodes");
    const int n = policies_.n_agents();
    std::vector<Vector> states;
    std::vector<JointDiscrete> acts;
    std::vector<std::vector<Vector>> inputs(n);
    for (const auto* ep : batch)
      for (int t = 0; t < ep->length(); ++t) {
        states.push_back(ep->steps[t].state);
        acts.push_back(ep->steps[t].actions);
        for (int i = 0; i < n; ++i) inputs[i].push_back(algo::episode_window(*ep, t, i, cfg_.window));
      }
    const int B = static_cast<int>(acts.size());
    Matrix S(states.front().size(), B);
    for (int b = 0; b < B; ++b) S.col(b) = states[b];
    for (int i = 0; i < n; ++i) {
      Matrix x(policies_.input_dim(), B);
      std::vector<int> ai(B);
      for (int b = 0; b < B; ++b) {
        x.col(b) = inputs[i][b];
        ai[b] = acts[b][i];
      }
      const Matrix pi = policies_.probs(i, x);
      const Matrix cf = critic_.net().forward(critic_.encode_counterfactual(S, acts, i));
      RowVector coeff(B);
      for (int b = 0; b < B; ++b) coeff[b] = coma_advantage(cf, b, ai[b], pi.col(b)) / B;
      const Grad g = policies_.log_prob_grad(i, x, ai, coeff);
      if (!g.all_finite()) throw TrainingError("non-finite actor gradient", steps_);
      actor_opts_[i].step(policies_.net(i).params(), -1.0 * g);
    }
    ++version_;
  }

  ComaConfig cfg_;
  algo::RunSettings run_;
  SeedTree seeds_;
  std::vector<std::unique_ptr<envs::Environment>> envs_;
  std::vector<Rng> env_rngs_;
  std::unique_ptr<envs::Environment> eval_env_;
  Rng explore_rng_, eval_rng_, probe_rng_;
  JointCritic critic_;
  algo::StochasticPolicySet policies_;
  nn::RmsProp critic_opt_;
  std::vector<nn::RmsProp> actor_opts_;
  algo::RingBuffer<envs::Episode> on_;
  double gamma_ = 0.99;
  long steps_ = 0, iterations_ = 0, version_ = 0;
  double last_loss_ = 0.0;
  std::vector<analysis::GradientVarianceReport> variance_log_;
};

}  // namespace dop::baselines
