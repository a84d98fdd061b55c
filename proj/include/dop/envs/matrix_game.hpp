#pragma once

#include <array>

#include "dop/envs/env.hpp"

namespace dop::envs {

// Stateless one-shot coordination game: 3 agents, 14 actions, +10 for the
// joint action (1, 5, 9) and -10 for everything else.
class MatrixGame final : public Environment {
 public:
  static constexpr int kAgents = 3;
  static constexpr int kActions = 14;
  static constexpr std::array<int, kAgents> kOptimal{1, 5, 9};
  static constexpr double kWin = 10.0;
  static constexpr double kLose = -10.0;

  MatrixGame() {
    spec_.name = "matrix_game";
    spec_.n_agents = kAgents;
    spec_.action_space = ActionSpace::discrete(kActions);
    spec_.obs_dim = 1;
    spec_.state_dim = 1;
    spec_.episode_limit = 1;
    spec_.gamma = 0.99;
  }

  const EnvSpec& spec() const override { return spec_; }

  StepResult reset(Rng&) override {
    t_ = 0;
    return observe(0.0, false);
  }

  StepResult step(std::span<const int> joint_action) override {
    return observe(payoff(joint_action), true);
  }

  // Reward table; also used as the exact Q_tot of the game.
  static double payoff(std::span<const int> joint_action) {
    if (joint_action.size() != kAgents) throw InputError("matrix_game expects exactly 3 actions");
    bool optimal = true;
    for (int i = 0; i < kAgents; ++i) {
      const int a = joint_action[i];
      if (a < 0 || a >= kActions) throw InputError("matrix_game action index out of range [0, 13]");
      optimal = optimal && a == kOptimal[i];
    }
    return optimal ? kWin : kLose;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<MatrixGame>(*this); }
  int t() const override { return t_; }

 private:
  StepResult observe(double reward, bool terminal) {
    StepResult r;
    r.observations.assign(kAgents, Vector::Zero(1));
    r.state = Vector::Zero(1);
    r.reward = reward;
    r.terminated = terminal;
    if (terminal) t_ = 1;
    return r;
  }

  EnvSpec spec_;
  int t_ = 0;
};

}  // namespace dop::envs
