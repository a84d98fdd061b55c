#pragma once

#include <cmath>
#include <cstdint>

#include "dop/envs/env.hpp"

namespace dop::envs {

// Joint actions are flattened row-major over agents, agent 0 outermost:
// index = ((a0 * A + a1) * A + a2) ...
inline long joint_count(int n_agents, int n_actions) {
  long c = 1;
  for (int i = 0; i < n_agents; ++i) c *= n_actions;
  return c;
}

inline long flatten_joint(std::span<const int> joint, int n_actions) {
  long idx = 0;
  for (int a : joint) idx = idx * n_actions + a;
  return idx;
}

inline JointDiscrete unflatten_joint(long idx, int n_agents, int n_actions) {
  JointDiscrete j(n_agents);
  for (int i = n_agents - 1; i >= 0; --i) {
    j[i] = static_cast<int>(idx % n_actions);
    idx /= n_actions;
  }
  return j;
}

// Fully specified finite Dec-MDP used as an oracle substrate.
struct TabularDecMDP {
  int n_states = 1;
  int n_agents = 2;
  int n_actions = 2;
  double gamma = 0.9;
  // transition[s * J + j] is a distribution over next states (size n_states).
  std::vector<Vector> transition;
  // reward(s, j)
  Matrix reward;
  Vector initial;

  long n_joint() const { return joint_count(n_agents, n_actions); }
  const Vector& next_dist(int s, long j) const { return transition[s * n_joint() + j]; }

  void validate() const {
    const long J = n_joint();
    if (reward.rows() != n_states || reward.cols() != J) throw ShapeError("tabular: reward table shape");
    if (static_cast<long>(transition.size()) != n_states * J) throw ShapeError("tabular: transition count");
    for (const auto& row : transition) {
      if (row.size() != n_states) throw ShapeError("tabular: transition row size");
      if (std::abs(row.sum() - 1.0) > 1e-12) throw InputError("tabular: transition row does not sum to 1");
    }
    if (initial.size() != n_states || std::abs(initial.sum() - 1.0) > 1e-12)
      throw InputError("tabular: initial distribution invalid");
  }
};

inline constexpr double kTabularSizeGuard = 1e6;

inline void check_tabular_size(int n_states, int n_agents, int n_actions) {
  if (n_states < 1 || n_agents < 1 || n_actions < 1) throw ConfigError("tabular: sizes must be positive");
  const double size = static_cast<double>(n_states) * std::pow(static_cast<double>(n_actions), n_agents);
  if (size > kTabularSizeGuard) throw ConfigError("tabular: n_states * n_actions^n_agents exceeds 1e6");
}

// Seeded random instance: transition rows are normalised uniform positives,
// rewards uniform in [-1, 1].
inline TabularDecMDP random_tabular(std::uint64_t seed, int n_states, int n_agents, int n_actions,
                                    double gamma = 0.9) {
  check_tabular_size(n_states, n_agents, n_actions);
  Rng rng(seed);
  TabularDecMDP m;
  m.n_states = n_states;
  m.n_agents = n_agents;
  m.n_actions = n_actions;
  m.gamma = gamma;
  const long J = m.n_joint();
  m.transition.reserve(n_states * J);
  for (long r = 0; r < n_states * J; ++r) {
    Vector row(n_states);
    for (int s = 0; s < n_states; ++s) row[s] = uniform(rng, 1e-3, 1.0);
    row /= row.sum();
    // Push the rounding residue into the largest entry so the sum is 1 to
    // within one ulp.
    Eigen::Index big;
    row.maxCoeff(&big);
    row[big] += 1.0 - row.sum();
    m.transition.push_back(std::move(row));
  }
  m.reward.resize(n_states, J);
  for (int s = 0; s < n_states; ++s)
    for (long j = 0; j < J; ++j) m.reward(s, j) = uniform(rng, -1.0, 1.0);
  m.initial = Vector::Constant(n_states, 1.0 / n_states);
  return m;
}

// Episodic wrapper over a TabularDecMDP; every agent observes the one-hot
// state.
class TabularEnv final : public Environment {
 public:
  TabularEnv(TabularDecMDP mdp, int episode_limit) : mdp_(std::move(mdp)) {
    mdp_.validate();
    spec_.name = "tabular";
    spec_.n_agents = mdp_.n_agents;
    spec_.action_space = ActionSpace::discrete(mdp_.n_actions);
    spec_.obs_dim = mdp_.n_states;
    spec_.state_dim = mdp_.n_states;
    spec_.episode_limit = episode_limit;
    spec_.gamma = mdp_.gamma;
  }

  const EnvSpec& spec() const override { return spec_; }
  const TabularDecMDP& mdp() const { return mdp_; }

  StepResult reset(Rng& rng) override {
    t_ = 0;
    rng_.seed(rng());
    s_ = sample_categorical(rng_, mdp_.initial);
    return observe(0.0, false);
  }

  StepResult step(std::span<const int> joint_action) override {
    if (static_cast<int>(joint_action.size()) != mdp_.n_agents) throw InputError("tabular: action arity");
    for (int a : joint_action)
      if (a < 0 || a >= mdp_.n_actions) throw InputError("tabular: action out of range");
    const long j = flatten_joint(joint_action, mdp_.n_actions);
    const double r = mdp_.reward(s_, j);
    s_ = sample_categorical(rng_, mdp_.next_dist(s_, j));
    ++t_;
    return observe(r, t_ >= spec_.episode_limit);
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<TabularEnv>(*this); }
  int t() const override { return t_; }
  int state_index() const { return s_; }

 private:
  StepResult observe(double reward, bool truncated) const {
    StepResult r;
    Vector onehot = Vector::Zero(mdp_.n_states);
    onehot[s_] = 1.0;
    r.observations.assign(mdp_.n_agents, onehot);
    r.state = onehot;
    r.reward = reward;
    r.truncated = truncated;
    return r;
  }

  TabularDecMDP mdp_;
  EnvSpec spec_;
  Rng rng_;
  int s_ = 0;
  int t_ = 0;
};

}  // namespace dop::envs
