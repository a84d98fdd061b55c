#include <gtest/gtest.h>

#include "dop/algo/deterministic.hpp"
#include "dop/envs/mill.hpp"
#include "dop/harness/metrics.hpp"

using namespace dop;
using namespace dop::algo;

namespace {

Vector randn(Rng& rng, int n) {
  Vector v(n);
  for (int k = 0; k < n; ++k) v[k] = normal(rng);
  return v;
}

struct Fixture {
  Rng rng{31};
  int n = 3, S = 2, O = 2;
  envs::ActionSpace space = envs::ActionSpace::continuous(1, -1.0, 1.0);
  critic::DecomposedCritic critic;
  DeterministicPolicySet actors;
  std::vector<Transition> data;

  Fixture() {
    critic::CriticConfig cc;
    cc.n_agents = n;
    cc.state_dim = S;
    cc.discrete = false;
    cc.action_dim = 1;
    cc.hidden = {8};
    critic = critic::DecomposedCritic(cc, rng);
    actors = DeterministicPolicySet(n, O, space, {8}, rng);
    // Make online and target copies differ.
    auto refs = critic.param_refs();
    for (std::size_t t = 0; t < refs.size(); ++t) refs[t].array() += 0.05;
    for (int b = 0; b < 6; ++b) {
      Transition tr;
      tr.state = randn(rng, S);
      tr.next_state = randn(rng, S);
      for (int i = 0; i < n; ++i) {
        tr.inputs.push_back(randn(rng, O));
        tr.next_inputs.push_back(randn(rng, O));
        tr.actions.push_back(Vector::Constant(1, uniform(rng, -1.0, 1.0)));
      }
      tr.reward = normal(rng);
      tr.terminated = b % 3 == 0;
      data.push_back(tr);
    }
  }
  std::vector<const Transition*> batch() const {
    std::vector<const Transition*> out;
    for (const auto& t : data) out.push_back(&t);
    return out;
  }
};

}  // namespace

TEST(DeterministicTargets, BootstrapFromTargetNetworks) {
  Fixture f;
  const double gamma = 0.9;
  const auto y = det_targets(f.batch(), f.critic, f.actors, gamma);
  for (std::size_t b = 0; b < f.data.size(); ++b) {
    const auto& tr = f.data[b];
    JointContinuous next;
    for (int i = 0; i < f.n; ++i) next.push_back(f.actors.action(i, tr.next_inputs[i], true));
    const double boot = f.critic.eval(tr.next_state, next, critic::Params::Target).q_tot;
    const double expect = tr.reward + (tr.terminated ? 0.0 : gamma * boot);
    EXPECT_NEAR(y[b], expect, 1e-12);
  }
}

TEST(DeterministicTargets, ActionsStayInTheBox) {
  Fixture f;
  for (const auto& tr : f.data)
    for (int i = 0; i < f.n; ++i) {
      const double a = f.actors.action(i, tr.inputs[i] * 100.0)[0];
      EXPECT_LE(a, 1.0);
      EXPECT_GE(a, -1.0);
    }
}

TEST(DeterministicCritic, LossMatchesDefinitionAndDecreases) {
  Fixture f;
  nn::RmsProp opt({1e-2, 0.99, 1e-8});
  const auto b = f.batch();
  const auto y = det_targets(b, f.critic, f.actors, 0.9);
  const auto pass = f.critic.forward(stack_states(b, false), buffered_actions(b));
  double mse = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) mse += std::pow(y[k] - pass.q_tot[k], 2) / b.size();
  const auto first = det_critic_update(f.critic, opt, b, f.actors, 0.9, false);
  EXPECT_NEAR(first.loss, mse, 1e-12);
  double last = first.loss;
  for (int k = 0; k < 200; ++k) last = det_critic_update(f.critic, opt, b, f.actors, 0.9).loss;
  EXPECT_LT(last, 0.05 * first.loss);
}

TEST(DeterministicActor, ActionGradientIsScaledLocalSlope) {
  Fixture f;
  const auto b = f.batch();
  const auto g = policy_action_gradients(b, f.critic, f.actors);
  ASSERT_EQ(static_cast<int>(g.size()), f.n);
  const double h = 1e-6;
  for (std::size_t k = 0; k < b.size(); ++k) {
    JointContinuous a;
    for (int i = 0; i < f.n; ++i) a.push_back(f.actors.action(i, b[k]->inputs[i]));
    for (int i = 0; i < f.n; ++i) {
      JointContinuous up = a, down = a;
      up[i][0] += h;
      down[i][0] -= h;
      const double fd = (f.critic.eval(b[k]->state, up).q_tot - f.critic.eval(b[k]->state, down).q_tot) / (2 * h);
      EXPECT_NEAR(g[i](0, k), fd, 1e-6);
    }
  }
}

TEST(DeterministicDop, MillRunIsReproducible) {
  envs::Mill env;
  DeterministicConfig cfg;
  cfg.batch = 16;
  cfg.warmup_steps = 50;
  cfg.critic_hidden = {8};
  cfg.actor_hidden = {8};
  RunSettings rs{"m", 2, 300, 100, 1, 0, false};
  auto run = [&] {
    DeterministicDop dop(env, cfg, rs);
    harness::MetricBuffer buf;
    dop.run(buf.sink());
    EXPECT_EQ(dop.steps(), 300);
    EXPECT_GT(dop.critic_updates(), 0);
    std::string s;
    for (const auto& r : buf.records) s += harness::csv_row(r) + "\n";
    return s;
  };
  EXPECT_EQ(run(), run());
}

TEST(DeterministicDop, CreditDirectionsHaveOnePerAgent) {
  envs::Mill env;
  DeterministicConfig cfg;
  cfg.critic_hidden = {8};
  cfg.actor_hidden = {8};
  DeterministicDop dop(env, cfg, RunSettings{});
  const auto dirs = dop.credit_directions();
  ASSERT_EQ(dirs.size(), 10u);
  for (const auto& d : dirs) EXPECT_EQ(d.size(), 1);
}

TEST(DeterministicConfig, Validation) {
  DeterministicConfig cfg;
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.train_every = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
