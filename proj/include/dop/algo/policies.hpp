#pragma once

#include <vector>

#include "dop/envs/env.hpp"
#include "dop/nn/mlp.hpp"
#include "dop/nn/optim.hpp"

namespace dop::algo {

using nn::Grad;
using nn::Mlp;

// Actors see a fixed window of their last `window` observations, oldest
// first, zero-padded before the start of the episode.
inline Vector observation_window(const std::vector<const Vector*>& history, int window, int obs_dim) {
  Vector x = Vector::Zero(static_cast<Eigen::Index>(window) * obs_dim);
  const int have = static_cast<int>(history.size());
  for (int w = 0; w < window; ++w) {
    const int src = have - window + w;
    if (src >= 0) x.segment(static_cast<Eigen::Index>(w) * obs_dim, obs_dim) = *history[src];
  }
  return x;
}

// Window for agent `agent` at step t of an episode; t == length() refers to
// the final observation.
inline Vector episode_window(const envs::Episode& ep, int t, int agent, int window) {
  std::vector<const Vector*> hist;
  const int first = std::max(0, t - window + 1);
  for (int s = first; s <= t; ++s)
    hist.push_back(s < ep.length() ? &ep.steps[s].observations[agent] : &ep.final_observations[agent]);
  const int obs_dim = static_cast<int>(hist.back()->size());
  return observation_window(hist, window, obs_dim);
}

// Rolling per-agent observation history used while acting.
class ObservationHistory {
 public:
  ObservationHistory(int n_agents, int window) : window_(window), hist_(n_agents) {}
  void reset(const std::vector<Vector>& obs) {
    for (auto& h : hist_) h.clear();
    push(obs);
  }
  void push(const std::vector<Vector>& obs) {
    for (std::size_t i = 0; i < hist_.size(); ++i) {
      hist_[i].push_back(obs[i]);
      if (static_cast<int>(hist_[i].size()) > window_) hist_[i].erase(hist_[i].begin());
    }
  }
  Vector input(int agent) const {
    std::vector<const Vector*> ptrs;
    for (const auto& o : hist_[agent]) ptrs.push_back(&o);
    return observation_window(ptrs, window_, static_cast<int>(hist_[agent].back().size()));
  }
  std::vector<Vector> inputs() const {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < hist_.size(); ++i) out.push_back(input(static_cast<int>(i)));
    return out;
  }

 private:
  int window_;
  std::vector<std::vector<Vector>> hist_;
};

inline std::vector<int> actor_widths(int input, const std::vector<int>& hidden, int output) {
  std::vector<int> w{input};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output);
  return w;
}

// n categorical policies pi_i(. | tau_i) with softmax heads, plus target copies.
class StochasticPolicySet {
 public:
  StochasticPolicySet() = default;
  StochasticPolicySet(int n_agents, int input_dim, int n_actions, const std::vector<int>& hidden, Rng& rng)
      : n_actions_(n_actions) {
    for (int i = 0; i < n_agents; ++i)
      online_.emplace_back(actor_widths(input_dim, hidden, n_actions), nn::Activation::Softmax, rng);
    target_ = online_;
  }

  int n_agents() const { return static_cast<int>(online_.size()); }
  int n_actions() const { return n_actions_; }
  int input_dim() const { return online_.front().input_dim(); }
  Mlp& net(int i) { return online_[i]; }
  const Mlp& net(int i) const { return online_[i]; }
  const Mlp& target_net(int i) const { return target_[i]; }
  std::vector<Mlp>& nets() { return online_; }

  void sync_target() { target_ = online_; }

  // |A| x B action probabilities for the input columns.
  Matrix probs(int agent, const Matrix& inputs, bool target = false) const {
    return (target ? target_ : online_)[agent].forward(inputs);
  }
  Vector probs(int agent, const Vector& input, bool target = false) const {
    return probs(agent, Matrix(input), target).col(0);
  }

  // sum_b coeff[b] * grad_theta log pi_i(actions[b] | inputs[:, b]).
  Grad log_prob_grad(int agent, const Matrix& inputs, const std::vector<int>& actions, const RowVector& coeff) const {
    nn::Tape tape;
    const Matrix p = online_[agent].forward(inputs, tape);
    Matrix up = -p;
    for (Eigen::Index b = 0; b < p.cols(); ++b) {
      up(actions[b], b) += 1.0;
      up.col(b) *= coeff[b];
    }
    return online_[agent].backward(tape, up, nn::UpstreamAt::PreActivation).params;
  }

 private:
  int n_actions_ = 0;
  std::vector<Mlp> online_;
  std::vector<Mlp> target_;
};

// (1 - eps) * pi + eps * Uniform(|A|)
inline Vector epsilon_mixture(const Vector& pi, double epsilon) {
  return (1.0 - epsilon) * pi + Vector::Constant(pi.size(), epsilon / pi.size());
}

struct ActResult {
  JointDiscrete actions;
  std::vector<double> behavior_probs;
};

// Samples every agent from the epsilon/uniform mixture of its policy and
// records the mixture probability of the sampled action.
inline ActResult act(const StochasticPolicySet& policies, const std::vector<Vector>& inputs, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InputError("act: epsilon must lie in [0, 1]");
  ActResult r;
  for (int i = 0; i < policies.n_agents(); ++i) {
    const Vector beta = epsilon_mixture(policies.probs(i, inputs[i]), epsilon);
    const int a = sample_categorical(rng, beta);
    r.actions.push_back(a);
    r.behavior_probs.push_back(beta[a]);
  }
  return r;
}

inline JointDiscrete greedy_actions(const StochasticPolicySet& policies, const std::vector<Vector>& inputs) {
  JointDiscrete a;
  for (int i = 0; i < policies.n_agents(); ++i) {
    Eigen::Index best;
    policies.probs(i, inputs[i]).maxCoeff(&best);
    a.push_back(static_cast<int>(best));
  }
  return a;
}

// Linear epsilon schedule, constant after `anneal_steps`.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  long anneal_steps = 500000;

  double at(long step) const {
    if (anneal_steps <= 0 || step >= anneal_steps) return end;
    return start + (end - start) * static_cast<double>(step) / static_cast<double>(anneal_steps);
  }
};

// n deterministic actors mu_i(tau_i) squashed into the action box:
//   mu = center + half_range * tanh(z)
class DeterministicPolicySet {
 public:
  DeterministicPolicySet() = default;
  DeterministicPolicySet(int n_agents, int input_dim, const envs::ActionSpace& space, const std::vector<int>& hidden,
                         Rng& rng)
      : center_((space.high + space.low) / 2.0), half_((space.high - space.low) / 2.0) {
    for (int i = 0; i < n_agents; ++i)
      online_.emplace_back(actor_widths(input_dim, hidden, space.dim), nn::Activation::Tanh, rng);
    target_ = online_;
  }

  int n_agents() const { return static_cast<int>(online_.size()); }
  int action_dim() const { return static_cast<int>(center_.size()); }
  Mlp& net(int i) { return online_[i]; }
  const Mlp& net(int i) const { return online_[i]; }
  std::vector<Mlp>& nets() { return online_; }
  std::vector<Mlp>& target_nets() { return target_; }
  const Vector& low_high_center() const { return center_; }

  void sync_target() { target_ = online_; }
  void soft_update_target(double alpha) {
    for (std::size_t i = 0; i < online_.size(); ++i) nn::soft_update(target_[i].params(), online_[i].params(), alpha);
  }

  Matrix actions(int agent, const Matrix& inputs, bool target = false) const {
    Matrix t = (target ? target_ : online_)[agent].forward(inputs);
    return squash(t);
  }
  Vector action(int agent, const Vector& input, bool target = false) const {
    return actions(agent, Matrix(input), target).col(0);
  }

  // sum_b upstream[:, b] . d mu_i(x_b) / d theta_i
  Grad action_backward(int agent, const Matrix& inputs, const Matrix& upstream) const {
    nn::Tape tape;
    online_[agent].forward(inputs, tape);
    Matrix up = upstream;
    for (Eigen::Index b = 0; b < up.cols(); ++b) up.col(b).array() *= half_.array();
    return online_[agent].backward(tape, up).params;
  }

 private:
  Matrix squash(const Matrix& t) const {
    Matrix a = t;
    for (Eigen::Index b = 0; b < a.cols(); ++b) a.col(b) = center_ + half_.cwiseProduct(t.col(b));
    return a;
  }

  Vector center_, half_;
  std::vector<Mlp> online_;
  std::vector<Mlp> target_;
};

}  // namespace dop::algo
