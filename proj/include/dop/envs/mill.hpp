#pragma once

#include "dop/envs/env.hpp"

namespace dop::envs {

// Agents push a millstone with a signed force in [-1, 1] (positive is
// clockwise). Angular velocity integrates the total force; the team earns
// 3 per step while omega > 30, and at the final step +10 if omega >= 100,
// otherwise -10.
class Mill final : public Environment {
 public:
  struct Params {
    int n_agents = 10;
    int episode_limit = 10;
    double force_coef = 1.5;
    double gamma = 0.99;
  };

  Mill() : Mill(Params{}) {}
  explicit Mill(Params p) : p_(p) {
    spec_.name = "mill";
    spec_.n_agents = p.n_agents;
    spec_.action_space = ActionSpace::continuous(1, -1.0, 1.0);
    spec_.obs_dim = 2;
    spec_.state_dim = 2;
    spec_.episode_limit = p.episode_limit;
    spec_.gamma = p.gamma;
    spec_.validate();
  }

  const EnvSpec& spec() const override { return spec_; }
  const Params& params() const { return p_; }

  StepResult reset(Rng&) override {
    t_ = 0;
    omega_ = 0.0;
    return observe(0.0, false, false);
  }

  StepResult step(const JointContinuous& joint_action) override {
    if (static_cast<int>(joint_action.size()) != p_.n_agents)
      throw InputError("mill: expected one action per agent");
    double force = 0.0;
    for (const auto& a : joint_action) {
      if (a.size() != 1) throw InputError("mill: each action must be a scalar");
      force += clip(a[0], -1.0, 1.0);
    }
    omega_ += p_.force_coef * force;
    ++t_;
    double reward = omega_ > 30.0 ? 3.0 : 0.0;
    if (t_ >= p_.episode_limit) {
      if (omega_ >= 100.0) return observe(reward + 10.0, true, false);
      return observe(reward - 10.0, false, true);
    }
    return observe(reward, false, false);
  }

  void set_omega(double w) { omega_ = w; }
  void set_t(int t) { t_ = t; }
  double omega() const { return omega_; }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<Mill>(*this); }
  int t() const override { return t_; }

 private:
  StepResult observe(double reward, bool terminated, bool truncated) const {
    StepResult r;
    Vector o(2);
    o << omega_ / 100.0, static_cast<double>(t_) / p_.episode_limit;
    r.observations.assign(p_.n_agents, o);
    r.state = o;
    r.reward = reward;
    r.terminated = terminated;
    r.truncated = truncated;
    return r;
  }

  Params p_;
  EnvSpec spec_;
  double omega_ = 0.0;
  int t_ = 0;
};

}  // namespace dop::envs
