#pragma once

#include "dop/envs/env.hpp"

namespace dop::envs {

// Point masses in [-1,1]^2 that must all gather within `radius` of a
// landmark at the origin. The team gets +10 on success and -10 when the
// episode limit runs out; all other steps pay 0.
class Aggregation final : public Environment {
 public:
  struct Params {
    int n_agents = 5;
    int episode_limit = 25;
    double speed = 0.2;
    double radius = 0.1;
    double gamma = 0.99;
  };

  Aggregation() : Aggregation(Params{}) {}
  explicit Aggregation(Params p) : p_(p) {
    spec_.name = "aggregation";
    spec_.n_agents = p.n_agents;
    spec_.action_space = ActionSpace::continuous(2, -1.0, 1.0);
    spec_.obs_dim = 4;
    spec_.state_dim = 2 * p.n_agents;
    spec_.episode_limit = p.episode_limit;
    spec_.gamma = p.gamma;
    spec_.validate();
    pos_.assign(p.n_agents, Eigen::Vector2d::Zero());
  }

  const EnvSpec& spec() const override { return spec_; }
  const Params& params() const { return p_; }

  StepResult reset(Rng& rng) override {
    t_ = 0;
    for (auto& q : pos_) q = Eigen::Vector2d(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    return observe(0.0, false, false);
  }

  StepResult step(const JointContinuous& joint_action) override {
    if (static_cast<int>(joint_action.size()) != p_.n_agents)
      throw InputError("aggregation: expected one action per agent");
    for (const auto& a : joint_action)
      if (a.size() != 2) throw InputError("aggregation: each action must be 2-dimensional");
    for (int i = 0; i < p_.n_agents; ++i) {
      for (int d = 0; d < 2; ++d) {
        pos_[i][d] = clip(pos_[i][d] + p_.speed * clip(joint_action[i][d], -1.0, 1.0), -1.0, 1.0);
      }
    }
    ++t_;
    bool all_in = true;
    for (const auto& q : pos_) all_in = all_in && q.norm() <= p_.radius;
    if (all_in) return observe(10.0, true, false);
    if (t_ >= p_.episode_limit) return observe(-10.0, false, true);
    return observe(0.0, false, false);
  }

  void set_positions(const std::vector<Eigen::Vector2d>& pos) {
    if (static_cast<int>(pos.size()) != p_.n_agents) throw InputError("aggregation: wrong position count");
    pos_ = pos;
  }
  void set_t(int t) { t_ = t; }
  const std::vector<Eigen::Vector2d>& positions() const { return pos_; }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<Aggregation>(*this); }
  int t() const override { return t_; }

 private:
  StepResult observe(double reward, bool terminated, bool truncated) const {
    StepResult r;
    r.observations.reserve(p_.n_agents);
    r.state.resize(2 * p_.n_agents);
    for (int i = 0; i < p_.n_agents; ++i) {
      Vector o(4);
      o << pos_[i][0], pos_[i][1], pos_[i][0], pos_[i][1];  // landmark at the origin
      r.observations.push_back(std::move(o));
      r.state.segment<2>(2 * i) = pos_[i];
    }
    r.reward = reward;
    r.terminated = terminated;
    r.truncated = truncated;
    return r;
  }

  Params p_;
  EnvSpec spec_;
  std::vector<Eigen::Vector2d> pos_;
  int t_ = 0;
};

}  // namespace dop::envs
