#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dop/algo/common.hpp"
#include "dop/analysis/variance.hpp"
#include "dop/critic/decomposed_critic.hpp"

namespace dop::algo {

using critic::DecomposedCritic;
using critic::Params;
using critic::ReadCounter;

struct TbConfig {
  double kappa = 0.5;
  int tb_steps = 5;
  double lambda_tb = 1.0;
  double lambda_on = 0.8;
  int target_update_period = 200;
  int off_batch = 32;
  int on_batch = 16;

  void validate() const {
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in [0, 1]");
    if (tb_steps < 1) throw ConfigError("tb_steps must be >= 1");
    if (!(lambda_tb >= 0.0 && lambda_tb <= 1.0)) throw ConfigError("lambda_tb must lie in [0, 1]");
    if (!(lambda_on >= 0.0 && lambda_on <= 1.0)) throw ConfigError("lambda_on must lie in [0, 1]");
    if (target_update_period < 1) throw ConfigError("target_update_period must be >= 1");
    if (off_batch < 1 || on_batch < 1) throw ConfigError("batch sizes must be >= 1");
  }
};

// How E_pi[Q_tot(s, .)] is computed inside the tree-backup target.
enum class ExpectationMode {
  Decomposed,  // sum_i k_i E_{pi_i}[Q_i] + b, n|A| reads
  Sampled,     // Monte-Carlo over joint actions drawn from pi
  Exhaustive,  // explicit sum over all |A|^n joint actions
};

struct ExpectationConfig {
  ExpectationMode mode = ExpectationMode::Decomposed;
  int samples = 200;
};

// Critic-side quantities along one episode, all from the target critic:
//   q[t]        = Q'_tot(s_t, a_t)                       t < T
//   expected[t] = E_pi[Q'_tot(s_t, .)]                   1 <= t <= T (expected[T] is the end bootstrap)
//   pi_joint[t] = prod_i pi_i(a_{t,i} | tau_{t,i})       t < T
struct EpisodeTerms {
  std::vector<double> q;
  std::vector<double> expected;
  std::vector<double> pi_joint;
  std::vector<double> rewards;
};

struct TermsOptions {
  int window = 1;
  bool bootstrap_on_truncation = true;
  bool target_critic = true;
  bool target_policy = true;
  ExpectationConfig expectation{};
};

// Per-agent policy probabilities (|A| x (T+1)) along an episode, column T
// being the final observation.
inline std::vector<Matrix> episode_policy_probs(const envs::Episode& ep, const StochasticPolicySet& pol, int window,
                                                bool target) {
  std::vector<Matrix> out;
  const int T = ep.length();
  for (int i = 0; i < pol.n_agents(); ++i) {
    Matrix x(pol.input_dim(), T + 1);
    for (int t = 0; t <= T; ++t) x.col(t) = episode_window(ep, t, i, window);
    out.push_back(pol.probs(i, x, target));
  }
  return out;
}

inline Matrix episode_states(const envs::Episode& ep) {
  const int T = ep.length();
  Matrix s(ep.final_state.size(), T + 1);
  for (int t = 0; t < T; ++t) s.col(t) = ep.steps[t].state;
  s.col(T) = ep.final_state;
  return s;
}

// E_pi[Q_tot] at one column of a values pass under the chosen mode.
inline double expectation_at(const DecomposedCritic& critic, const DecomposedCritic::Pass& pass, int col,
                             const std::vector<Vector>& pi, const ExpectationConfig& ec, Rng* rng,
                             ReadCounter* counter) {
  const int n = critic.n_agents(), A = critic.n_actions();
  auto q_tot_at = [&](const JointDiscrete& a) {
    double v = pass.bias[col];
    for (int i = 0; i < n; ++i) v += pass.k(i, col) * pass.values[i](a[i], col);
    return v;
  };
  switch (ec.mode) {
    case ExpectationMode::Decomposed: return critic.expected_q(pass, col, pi, counter);
    case ExpectationMode::Exhaustive: {
      const long J = envs::joint_count(n, A);
      double acc = 0.0;
      for (long j = 0; j < J; ++j) {
        const JointDiscrete a = envs::unflatten_joint(j, n, A);
        double w = 1.0;
        for (int i = 0; i < n; ++i) w *= pi[i][a[i]];
        acc += w * q_tot_at(a);
      }
      if (counter) counter->reads += J;
      return acc;
    }
    case ExpectationMode::Sampled: {
      if (!rng) throw StateError("sampled expectation needs a random generator");
      if (ec.samples < 1) throw ConfigError("sampled expectation needs at least one sample");
      double acc = 0.0;
      JointDiscrete a(n);
      for (int m = 0; m < ec.samples; ++m) {
        for (int i = 0; i < n; ++i) a[i] = sample_categorical(*rng, pi[i]);
        acc += q_tot_at(a);
      }
      if (counter) counter->reads += ec.samples;
      return acc / ec.samples;
    }
  }
  return 0.0;
}

// Terms for a batch of episodes from one critic pass and one policy pass per
// agent over all their timesteps.
inline std::vector<EpisodeTerms> episode_terms(const std::vector<const envs::Episode*>& eps,
                                               const DecomposedCritic& critic, const StochasticPolicySet& policies,
                                               const TermsOptions& opt, Rng* rng = nullptr,
                                               ReadCounter* counter = nullptr) {
  if (eps.empty()) return {};
  const int n = critic.n_agents();
  std::vector<int> offset;
  int cols = 0;
  for (const auto* ep : eps) {
    if (ep->length() == 0) throw DataError("empty episode");
    offset.push_back(cols);
    cols += ep->length() + 1;
  }
  Matrix states(eps.front()->final_state.size(), cols);
  std::vector<Matrix> inputs(n, Matrix(policies.input_dim(), cols));
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const auto& ep = *eps[e];
    states.middleCols(offset[e], ep.length() + 1) = episode_states(ep);
    for (int t = 0; t <= ep.length(); ++t)
      for (int i = 0; i < n; ++i) inputs[i].col(offset[e] + t) = episode_window(ep, t, i, opt.window);
  }
  const auto pass = critic.forward_values(states, opt.target_critic ? Params::Target : Params::Online);
  std::vector<Matrix> probs;
  for (int i = 0; i < n; ++i) probs.push_back(policies.probs(i, inputs[i], opt.target_policy));

  std::vector<EpisodeTerms> out(eps.size());
  std::vector<Vector> pi(n);
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const auto& ep = *eps[e];
    const int T = ep.length();
    EpisodeTerms& et = out[e];
    et.q.resize(T);
    et.pi_joint.resize(T);
    et.rewards.resize(T);
    et.expected.assign(T + 1, 0.0);
    for (int t = 0; t <= T; ++t) {
      const int col = offset[e] + t;
      for (int i = 0; i < n; ++i) pi[i] = probs[i].col(col);
      if (t < T) {
        const auto& st = ep.steps[t];
        double q = pass.bias[col], pj = 1.0;
        for (int i = 0; i < n; ++i) {
          q += pass.k(i, col) * pass.values[i](st.actions[i], col);
          pj *= pi[i][st.actions[i]];
        }
        et.q[t] = q;
        et.pi_joint[t] = pj;
        et.rewards[t] = st.reward;
      }
      const bool end = (t == T);
      if (t >= 1 && (!end || (!ep.terminated && opt.bootstrap_on_truncation)))
        et.expected[t] = expectation_at(critic, pass, col, pi, opt.expectation, rng, counter);
    }
  }
  return out;
}

inline EpisodeTerms episode_terms(const envs::Episode& ep, const DecomposedCritic& critic,
                                  const StochasticPolicySet& policies, const TermsOptions& opt, Rng* rng = nullptr,
                                  ReadCounter* counter = nullptr) {
  return episode_terms(std::vector<const envs::Episode*>{&ep}, critic, policies, opt, rng, counter).front();
}

// k-step decomposed tree-backup target from t0:
//   y = q[t0] + sum_{t=t0}^{t0+k-1} gamma^(t-t0) c_t [r_t + gamma E[t+1] - q[t]],
//   c_t0 = 1, c_t = c_{t-1} * lambda * pi(a_t | tau_t); truncated at episode end.
inline double tb_target_from_terms(const EpisodeTerms& e, int t0, double gamma, const TbConfig& cfg) {
  const int T = static_cast<int>(e.q.size());
  if (t0 < 0 || t0 >= T) throw InputError("tb_target: t0 outside the episode");
  double y = e.q[t0], c = 1.0, disc = 1.0;
  const int end = std::min(t0 + cfg.tb_steps, T);
  for (int t = t0; t < end; ++t) {
    if (t > t0) c *= cfg.lambda_tb * e.pi_joint[t];
    y += disc * c * (e.rewards[t] + gamma * e.expected[t + 1] - e.q[t]);
    disc *= gamma;
  }
  return y;
}

// TD(lambda) target from t0:
//   y = q[t0] + sum_{t>=t0} (gamma lambda)^(t-t0) [r_t + gamma q[t+1] - q[t]]
// with q[T] replaced by the end bootstrap (0 when terminated).
inline double on_target_from_terms(const EpisodeTerms& e, int t0, double gamma, double lambda_on) {
  const int T = static_cast<int>(e.q.size());
  if (t0 < 0 || t0 >= T) throw InputError("on_target: t0 outside the episode");
  double y = e.q[t0], w = 1.0;
  for (int t = t0; t < T; ++t) {
    const double next = (t + 1 < T) ? e.q[t + 1] : e.expected[T];
    y += w * (e.rewards[t] + gamma * next - e.q[t]);
    w *= gamma * lambda_on;
  }
  return y;
}

inline double tb_target(const envs::Episode& ep, int t0, const DecomposedCritic& critic,
                        const StochasticPolicySet& policies, const TbConfig& cfg, double gamma,
                        const TermsOptions& opt = {}) {
  ep.validate_behavior();
  return tb_target_from_terms(episode_terms(ep, critic, policies, opt), t0, gamma, cfg);
}

inline double on_target(const envs::Episode& ep, int t0, const DecomposedCritic& critic,
                        const StochasticPolicySet& policies, double gamma, double lambda_on,
                        const TermsOptions& opt = {}) {
  return on_target_from_terms(episode_terms(ep, critic, policies, opt), t0, gamma, lambda_on);
}

// U_i(s, a_i) = k_i(s) (Q_i(s, a_i) - sum_x pi_i(x) Q_i(s, x)), from the
// local value vector of agent i.
inline double aristocrat_utility(double k_i, const Vector& q_i, const Vector& pi_i, int action) {
  if (q_i.size() != pi_i.size()) throw ShapeError("aristocrat_utility: |Q_i| != |pi_i|");
  return k_i * (q_i[action] - pi_i.dot(q_i));
}

inline double aristocrat_utility(const DecomposedCritic::Pass& pass, int col, int agent, const Vector& pi_i,
                                 int action) {
  return aristocrat_utility(pass.k(agent, col), pass.values[agent].col(col), pi_i, action);
}

struct CriticLoss {
  double tb = 0.0;
  double on = 0.0;
  double total = 0.0;
  double k_spread = 0.0;
};

struct CriticBatch {
  std::vector<const envs::Episode*> off;
  std::vector<const envs::Episode*> on;
};

struct CriticUpdateOptions {
  TbConfig tb{};
  double gamma = 0.99;
  TermsOptions terms{};
};

// Mixed off/on-policy critic loss
//   L = kappa * mean_off (y_TB - Q_tot)^2 + (1 - kappa) * mean_on (y_On - Q_tot)^2
// and one optimiser step. Targets come from the target critic and target
// policies and are treated as constants.
inline CriticLoss critic_loss_and_update(DecomposedCritic& critic, nn::RmsProp& opt, const CriticBatch& batch,
                                         const StochasticPolicySet& policies, const CriticUpdateOptions& cu,
                                         Rng* rng = nullptr, bool apply = true) {
  const double kappa = cu.tb.kappa;
  const bool use_off = kappa > 0.0, use_on = kappa < 1.0;
  if ((use_off && batch.off.empty()) || (use_on && batch.on.empty()))
    throw StateError("critic update needs non-empty off- and on-policy batches");

  std::vector<Vector> states;
  std::vector<JointDiscrete> actions;
  std::vector<double> targets;
  auto add = [&](const std::vector<const envs::Episode*>& eps, bool off) {
    if (off)
      for (const auto* ep : eps) ep->validate_behavior();
    const auto terms = episode_terms(eps, critic, policies, cu.terms, rng);
    for (std::size_t e = 0; e < eps.size(); ++e) {
      const auto& ep = *eps[e];
      for (int t = 0; t < ep.length(); ++t) {
        states.push_back(ep.steps[t].state);
        actions.push_back(ep.steps[t].actions);
        targets.push_back(off ? tb_target_from_terms(terms[e], t, cu.gamma, cu.tb)
                              : on_target_from_terms(terms[e], t, cu.gamma, cu.tb.lambda_on));
      }
    }
  };
  if (use_off) add(batch.off, true);
  const std::size_t n_off = targets.size();
  if (use_on) add(batch.on, false);
  const std::size_t n_on = targets.size() - n_off;

  Matrix s(states.front().size(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t b = 0; b < states.size(); ++b) s.col(b) = states[b];
  const auto pass = critic.forward(s, actions);

  CriticLoss loss;
  RowVector dq(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const double err = targets[b] - pass.q_tot[b];
    if (b < n_off) {
      loss.tb += err * err / n_off;
      dq[b] = -2.0 * kappa * err / n_off;
    } else {
      loss.on += err * err / n_on;
      dq[b] = -2.0 * (1.0 - kappa) * err / n_on;
    }
  }
  loss.total = kappa * loss.tb + (1.0 - kappa) * loss.on;
  for (Eigen::Index b = 0; b < pass.k.cols(); ++b) loss.k_spread += pass.k.col(b).maxCoeff() - pass.k.col(b).minCoeff();
  loss.k_spread /= std::max<Eigen::Index>(1, pass.k.cols());
  if (apply) {
    auto refs = critic.param_refs();
    opt.step(refs, critic.backward(pass, dq));
  }
  return loss;
}

struct ActorGradientOptions {
  int window = 1;
  bool advantage = false;  // use the aristocrat utility instead of k_i Q_i
};

struct ActorSample {
  Vector state;
  std::vector<Vector> inputs;  // per agent observation window
  JointDiscrete actions;
  double weight = 1.0;
};

inline std::vector<ActorSample> actor_samples(const std::vector<const envs::Episode*>& eps, int window) {
  std::vector<ActorSample> out;
  for (const auto* ep : eps) {
    for (int t = 0; t < ep->length(); ++t) {
      ActorSample s;
      s.state = ep->steps[t].state;
      s.actions = ep->steps[t].actions;
      for (std::size_t i = 0; i < s.actions.size(); ++i)
        s.inputs.push_back(episode_window(*ep, t, static_cast<int>(i), window));
      out.push_back(std::move(s));
    }
  }
  return out;
}

// g_i = mean_b w_b k_i(s_b) grad log pi_i(a_{b,i} | tau_{b,i}) Q_i(s_b, a_{b,i})
// (or with the aristocrat utility in place of k_i Q_i). Agent i's term only
// reads (s, a_i).
inline std::vector<Grad> actor_gradient_from_samples(const std::vector<ActorSample>& samples,
                                                     const DecomposedCritic& critic,
                                                     const StochasticPolicySet& policies, bool advantage) {
  if (samples.empty()) throw StateError("actor gradient needs a non-empty batch");
  const int n = policies.n_agents();
  const int B = static_cast<int>(samples.size());
  Matrix s(samples.front().state.size(), B);
  for (int b = 0; b < B; ++b) s.col(b) = samples[b].state;
  const auto pass = critic.forward_values(s);
  std::vector<Grad> grads;
  for (int i = 0; i < n; ++i) {
    Matrix x(policies.input_dim(), B);
    std::vector<int> acts(B);
    for (int b = 0; b < B; ++b) {
      x.col(b) = samples[b].inputs[i];
      acts[b] = samples[b].actions[i];
    }
    RowVector coeff(B);
    const Matrix pi = advantage ? policies.probs(i, x) : Matrix();
    for (int b = 0; b < B; ++b) {
      const double credit = advantage ? aristocrat_utility(pass, b, i, pi.col(b), acts[b])
                                      : pass.k(i, b) * pass.values[i](acts[b], b);
      coeff[b] = samples[b].weight * credit / B;
    }
    grads.push_back(policies.log_prob_grad(i, x, acts, coeff));
  }
  return grads;
}

// On-policy decomposed actor gradient over a batch of episodes generated by
// the current policy version.
inline std::vector<Grad> actor_gradient(const std::vector<const envs::Episode*>& batch, long current_version,
                                        const DecomposedCritic& critic, const StochasticPolicySet& policies,
                                        const ActorGradientOptions& opt = {}) {
  for (const auto* ep : batch)
    if (ep->policy_version != current_version)
      throw DataError("actor batch contains an episode from a stale policy");
  return actor_gradient_from_samples(actor_samples(batch, opt.window), critic, policies, opt.advantage);
}

// Off-policy variant: each sample is weighted by the clipped joint ratio
// prod_i pi_i(a_i) / beta_i(a_i).
inline std::vector<Grad> offpolicy_actor_gradient(const std::vector<const envs::Episode*>& batch,
                                                  const DecomposedCritic& critic,
                                                  const StochasticPolicySet& policies, int window,
                                                  double ratio_clip = 10.0, bool advantage = false) {
  std::vector<ActorSample> samples;
  for (const auto* ep : batch) {
    ep->validate_behavior();
    const auto probs = episode_policy_probs(*ep, policies, window, false);
    auto part = actor_samples({ep}, window);
    for (int t = 0; t < ep->length(); ++t) {
      double ratio = 1.0;
      for (int i = 0; i < policies.n_agents(); ++i) {
        const int a = ep->steps[t].actions[i];
        ratio *= probs[i](a, t) / ep->steps[t].behavior_probs[i];
      }
      part[t].weight = std::min(ratio, ratio_clip);
    }
    samples.insert(samples.end(), part.begin(), part.end());
  }
  return actor_gradient_from_samples(samples, critic, policies, advantage);
}

// Applies one ascent step per agent.
inline void apply_actor_step(StochasticPolicySet& policies, std::vector<nn::RmsProp>& opts,
                             const std::vector<Grad>& grads) {
  for (int i = 0; i < policies.n_agents(); ++i) opts[i].step(policies.net(i).params(), -1.0 * grads[i]);
}

struct StochasticConfig {
  TbConfig tb{};
  ExpectationConfig expectation{};
  double critic_lr = 1e-4;
  double actor_lr = 5e-4;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  std::size_t off_capacity = 5000;
  std::size_t on_capacity = 32;
  EpsilonSchedule epsilon{};
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> actor_hidden{64};
  int window = 1;
  bool advantage = false;
  bool offpolicy_actor = false;
  double ratio_clip = 10.0;
  int collectors = 1;
  // Environment steps of critic-only training before the first actor step.
  long actor_warmup_steps = 0;
  bool bootstrap_on_truncation = true;
  bool per_agent_networks = false;
  bool normalize_mixing = true;

  void validate() const {
    tb.validate();
    if (window < 1) throw ConfigError("window must be >= 1");
    if (collectors < 1) throw ConfigError("collectors must be >= 1");
    if (!(critic_lr > 0.0 && actor_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(ratio_clip > 0.0)) throw ConfigError("ratio_clip must be positive");
  }
};

struct EpisodeBuffers {
  RingBuffer<envs::Episode> off;
  RingBuffer<envs::Episode> on;

  EpisodeBuffers(std::size_t off_capacity, std::size_t on_capacity) : off(off_capacity), on(on_capacity) {}

  void store(const envs::Episode& ep) {
    off.push(ep);
    on.push(ep);
  }
  // Episodes from the given policy version, oldest first.
  std::vector<const envs::Episode*> fresh(long version) const {
    std::vector<const envs::Episode*> out;
    for (std::size_t k = 0; k < on.size(); ++k)
      if (on[k].policy_version == version) out.push_back(&on[k]);
    return out;
  }
};

// Stochastic DOP: episodes are collected with the epsilon-mixture of the
// current policies, actors take one on-policy decomposed gradient step,
// the critic one mixed tree-backup / TD(lambda) step, and target networks
// are hard-copied every d iterations.
class StochasticDop : public Trainer {
 public:
  StochasticDop(const envs::Environment& env, StochasticConfig cfg, RunSettings run)
      : cfg_(std::move(cfg)), run_(std::move(run)), seeds_(run_.seed), buffers_(cfg_.off_capacity, cfg_.on_capacity) {
    cfg_.validate();
    const auto& spec = env.spec();
    if (!spec.action_space.is_discrete()) throw ConfigError("stochastic DOP needs a discrete action space");
    for (int c = 0; c < cfg_.collectors; ++c) {
      envs_.push_back(env.clone());
      env_rngs_.push_back(seeds_.rng_for("env", c));
    }
    eval_env_ = env.clone();
    explore_rng_ = seeds_.rng_for("explore");
    buffer_rng_ = seeds_.rng_for("buffer");
    eval_rng_ = seeds_.rng_for("eval");
    probe_rng_ = seeds_.rng_for("probe");
    expect_rng_ = seeds_.rng_for("expectation");
    Rng init = seeds_.rng_for("init");
    critic::CriticConfig cc;
    cc.n_agents = spec.n_agents;
    cc.state_dim = spec.state_dim;
    cc.discrete = true;
    cc.n_actions = spec.action_space.size;
    cc.hidden = cfg_.critic_hidden;
    cc.per_agent_networks = cfg_.per_agent_networks;
    cc.normalize_mixing = cfg_.normalize_mixing;
    critic_ = DecomposedCritic(cc, init);
    policies_ = StochasticPolicySet(spec.n_agents, cfg_.window * spec.obs_dim, cc.n_actions, cfg_.actor_hidden, init);
    critic_opt_ = nn::RmsProp({cfg_.critic_lr, cfg_.rms_alpha, cfg_.rms_eps});
    actor_opts_.assign(spec.n_agents, nn::RmsProp({cfg_.actor_lr, cfg_.rms_alpha, cfg_.rms_eps}));
    gamma_ = spec.gamma;
  }

  const StochasticConfig& config() const { return cfg_; }
  const RunSettings& settings() const { return run_; }
  const DecomposedCritic& critic() const { return critic_; }
  DecomposedCritic& critic() { return critic_; }
  const StochasticPolicySet& policies() const { return policies_; }
  StochasticPolicySet& policies() { return policies_; }
  const EpisodeBuffers& buffers() const { return buffers_; }
  long steps() const override { return steps_; }
  long iterations() const { return iterations_; }
  long policy_version() const { return version_; }
  const std::vector<analysis::GradientVarianceReport>& variance_log() const { return variance_log_; }
  const CriticLoss& last_loss() const { return last_loss_; }

  // One iteration: collect, actor step, critic step, periodic target sync.
  std::vector<double> iterate() {
    std::vector<double> returns;
    const double eps = cfg_.epsilon.at(steps_);
    for (int c = 0; c < cfg_.collectors; ++c) {
      envs::Episode ep = rollout_discrete(*envs_[c], env_rngs_[c], cfg_.window,
                                          [&](const std::vector<Vector>& in) { return act(policies_, in, eps, explore_rng_); });
      ep.policy_version = version_;
      steps_ += ep.length();
      returns.push_back(ep.total_reward());
      buffers_.store(ep);
    }

    // Actors.
    if (steps_ > cfg_.actor_warmup_steps) actor_step();

    // Critic.
    CriticBatch cb;
    if (cfg_.tb.kappa > 0.0) cb.off = buffers_.off.sample(cfg_.tb.off_batch, buffer_rng_);
    if (cfg_.tb.kappa < 1.0) cb.on = buffers_.on.latest(cfg_.tb.on_batch);
    CriticUpdateOptions cu;
    cu.tb = cfg_.tb;
    cu.gamma = gamma_;
    cu.terms.window = cfg_.window;
    cu.terms.bootstrap_on_truncation = cfg_.bootstrap_on_truncation;
    cu.terms.expectation = cfg_.expectation;
    last_loss_ = critic_loss_and_update(critic_, critic_opt_, cb, policies_, cu, &expect_rng_);
    require_finite(last_loss_.total, "critic loss", steps_);

    ++iterations_;
    if (iterations_ % cfg_.tb.target_update_period == 0) {
      critic_.sync_target();
      policies_.sync_target();
    }
    return returns;
  }

  void run(const MetricSink& sink) override {
    MetricClock clock(run_.metric_period);
    WallClock wall;
    while (steps_ < run_.total_steps) {
      for (double r : iterate()) clock.add_return(r);
      if (clock.due(steps_) || steps_ >= run_.total_steps) {
        clock.advance(steps_);
        MetricRecord rec = base_record();
        rec.train_return = clock.take_return();
        if (run_.record_wall_clock) rec.wall_clock = wall.seconds();
        sink(rec);
      }
    }
  }

  double greedy_return() {
    if (run_.eval_episodes < 1) return 0.0;
    double acc = 0.0;
    for (int e = 0; e < run_.eval_episodes; ++e) {
      auto ep = rollout_discrete(*eval_env_, eval_rng_, cfg_.window, [&](const std::vector<Vector>& in) {
        ActResult r;
        r.actions = greedy_actions(policies_, in);
        r.behavior_probs.assign(r.actions.size(), 1.0);
        return r;
      });
      acc += ep.total_reward();
    }
    return acc / run_.eval_episodes;
  }

  // Starting state and per-agent policy inputs of a fresh episode.
  std::pair<Vector, std::vector<Vector>> probe_point() {
    auto env = eval_env_->clone();
    Rng r = seeds_.rng_for("probe_state");
    const auto res = env->reset(r);
    ObservationHistory h(env->spec().n_agents, cfg_.window);
    h.reset(res.observations);
    return {res.state, h.inputs()};
  }

  // argmax_a Q_i(s0, a) per agent.
  std::vector<int> local_argmax() {
    const auto [s, in] = probe_point();
    const auto pass = critic_.forward_values(Matrix(s));
    std::vector<int> out;
    for (int i = 0; i < critic_.n_agents(); ++i) {
      Eigen::Index best;
      pass.values[i].col(0).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
    return out;
  }

  // Per-sample actor gradient variance of agent i at the probe state, with
  // a_i fixed and a_{-i} drawn from the behaviour mixture.
  analysis::GradientVarianceReport probe_variance(int samples) {
    const auto [s, in] = probe_point();
    const int n = policies_.n_agents(), A = policies_.n_actions();
    std::vector<Vector> pi;
    for (int i = 0; i < n; ++i) pi.push_back(policies_.probs(i, in[i]));
    // Other agents act from the exploration mixture that generates actor batches.
    std::vector<Vector> beta;
    for (const auto& p : pi) beta.push_back(epsilon_mixture(p, cfg_.epsilon.at(steps_)));
    std::vector<std::vector<Vector>> score(n, std::vector<Vector>(A));
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < A; ++a)
        score[i][a] = policies_.log_prob_grad(i, Matrix(in[i]), {a}, RowVector::Ones(1)).flatten();
    const Vector state = s;
    auto sampler = [&](int i, int a, Rng& rng) -> Vector {
      JointDiscrete ja(n);
      for (int j = 0; j < n; ++j) ja[j] = (j == i) ? a : sample_categorical(rng, beta[j]);
      const auto pass = critic_.forward(Matrix(state), {ja});
      const double credit = cfg_.advantage ? aristocrat_utility(pass, 0, i, pi[i], a) : pass.k(i, 0) * pass.local(i, 0);
      return credit * score[i][a];
    };
    auto rep = analysis::gradient_variance(pi, sampler, samples, probe_rng_);
    rep.step = steps_;
    return rep;
  }

  // Mean |Q_tot(s0, a) - Q_true(a)| over every joint action (one-shot games).
  std::optional<double> bias() {
    const auto truth = truth_table(*eval_env_);
    if (!truth) return std::nullopt;
    const auto [s, in] = probe_point();
    const int n = critic_.n_agents(), A = critic_.n_actions();
    const auto pass = critic_.forward_values(Matrix(s));
    double acc = 0.0;
    for (long j = 0; j < truth->size(); ++j) {
      const auto a = envs::unflatten_joint(j, n, A);
      double q = pass.bias[0];
      for (int i = 0; i < n; ++i) q += pass.k(i, 0) * pass.values[i](a[i], 0);
      acc += std::abs(q - (*truth)[j]);
    }
    return acc / truth->size();
  }

 private:
  void actor_step() {
    std::vector<Grad> g;
    if (cfg_.offpolicy_actor) {
      g = offpolicy_actor_gradient(buffers_.off.sample(cfg_.tb.off_batch, buffer_rng_), critic_, policies_,
                                   cfg_.window, cfg_.ratio_clip, cfg_.advantage);
    } else {
      auto batch = buffers_.fresh(version_);
      if (static_cast<int>(batch.size()) > cfg_.tb.on_batch)
        batch.erase(batch.begin(), batch.end() - cfg_.tb.on_batch);
      g = actor_gradient(batch, version_, critic_, policies_, {cfg_.window, cfg_.advantage});
    }
    for (const auto& gi : g)
      if (!gi.all_finite()) throw TrainingError("non-finite actor gradient", steps_);
    apply_actor_step(policies_, actor_opts_, g);
    ++version_;
  }

  MetricRecord base_record() {
    MetricRecord rec;
    rec.run_id = run_.run_id;
    rec.seed = run_.seed;
    rec.step = steps_;
    rec.eval_return = greedy_return();
    rec.k_spread = last_loss_.k_spread;
    if (cfg_.tb.kappa > 0.0) rec.loss_tb = last_loss_.tb;
    if (cfg_.tb.kappa < 1.0) rec.loss_on = last_loss_.on;
    if (run_.variance_samples > 0) {
      auto rep = probe_variance(run_.variance_samples);
      if (rep.reportable()) rec.grad_variance = rep.mean();
      variance_log_.push_back(std::move(rep));
    }
    rec.bias = bias();
    if (is_matrix_game(*eval_env_)) rec.argmax_actions = local_argmax();
    return rec;
  }

  StochasticConfig cfg_;
  RunSettings run_;
  SeedTree seeds_;
  std::vector<std::unique_ptr<envs::Environment>> envs_;
  std::vector<Rng> env_rngs_;
  std::unique_ptr<envs::Environment> eval_env_;
  Rng explore_rng_, buffer_rng_, eval_rng_, probe_rng_, expect_rng_;
  DecomposedCritic critic_;
  StochasticPolicySet policies_;
  nn::RmsProp critic_opt_;
  std::vector<nn::RmsProp> actor_opts_;
  EpisodeBuffers buffers_;
  double gamma_ = 0.99;
  long steps_ = 0, iterations_ = 0, version_ = 0;
  CriticLoss last_loss_{};
  std::vector<analysis::GradientVarianceReport> variance_log_;
};

}  // namespace dop::algo
