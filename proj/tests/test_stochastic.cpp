#include <gtest/gtest.h>

#include "dop/algo/stochastic.hpp"
#include "dop/analysis/oracles.hpp"
#include "dop/envs/matrix_game.hpp"
#include "dop/envs/mill.hpp"
#include "dop/envs/tabular.hpp"
#include "dop/harness/metrics.hpp"

using namespace dop;
using namespace dop::algo;

namespace {

Vector randn(Rng& rng, int n) {
  Vector v(n);
  for (int k = 0; k < n; ++k) v[k] = normal(rng);
  return v;
}

envs::Episode random_episode(Rng& rng, int T, int n, int A, int obs, int state) {
  envs::Episode ep;
  for (int t = 0; t < T; ++t) {
    envs::EpisodeStep st;
    for (int i = 0; i < n; ++i) st.observations.push_back(randn(rng, obs));
    st.state = randn(rng, state);
    for (int i = 0; i < n; ++i) {
      st.actions.push_back(static_cast<int>(uniform_index(rng, A)));
      st.behavior_probs.push_back(uniform(rng, 0.1, 1.0));
    }
    st.reward = normal(rng);
    ep.steps.push_back(st);
  }
  for (int i = 0; i < n; ++i) ep.final_observations.push_back(randn(rng, obs));
  ep.final_state = randn(rng, state);
  return ep;
}

critic::CriticConfig config(int n, int A, int S) {
  critic::CriticConfig cc;
  cc.n_agents = n;
  cc.n_actions = A;
  cc.state_dim = S;
  cc.hidden = {6};
  return cc;
}

}  // namespace

TEST(TreeBackup, HandComputedTwoStepTarget) {
  EpisodeTerms e;
  e.q = {1.0, 2.0};
  e.expected = {0.0, 3.0, 0.0};
  e.pi_joint = {0.5, 0.5};
  e.rewards = {1.0, 1.0};
  TbConfig tb;
  tb.lambda_tb = 1.0;
  // 1 + (1 + 0.9*3 - 1) + 0.9 * 0.5 * (1 + 0 - 2)
  EXPECT_NEAR(tb_target_from_terms(e, 0, 0.9, tb), 3.25, 1e-12);
  tb.tb_steps = 1;
  EXPECT_NEAR(tb_target_from_terms(e, 0, 0.9, tb), 3.7, 1e-12);
  EXPECT_THROW(tb_target_from_terms(e, 2, 0.9, tb), InputError);
}

TEST(TreeBackup, MatchesJointActionOracle) {
  Rng rng(21);
  const int n = 2, A = 3, S = 2, O = 2;
  for (int m = 0; m < 50; ++m) {
    critic::DecomposedCritic critic(config(n, A, S), rng);
    StochasticPolicySet pol(n, O, A, {5}, rng);
    const int T = 1 + static_cast<int>(uniform_index(rng, 6));
    auto ep = random_episode(rng, T, n, A, O, S);
    ep.terminated = m % 2 == 0;
    TbConfig tb;
    tb.tb_steps = 1 + m % 5;
    tb.lambda_tb = m % 3 == 0 ? 1.0 : uniform01(rng);
    const double gamma = 0.95;
    const int t0 = static_cast<int>(uniform_index(rng, T));

    analysis::OracleEpisode oe;
    for (const auto& st : ep.steps) {
      oe.actions.push_back(st.actions);
      oe.rewards.push_back(st.reward);
    }
    oe.terminated = ep.terminated;
    oe.q = [&](int t, const JointDiscrete& a) {
      return critic.eval(t < T ? ep.steps[t].state : ep.final_state, a, critic::Params::Target).q_tot;
    };
    oe.pi = [&](int t) {
      std::vector<Vector> p;
      for (int i = 0; i < n; ++i)
        p.push_back(pol.probs(i, t < T ? ep.steps[t].observations[i] : ep.final_observations[i], true));
      return p;
    };
    EXPECT_NEAR(tb_target(ep, t0, critic, pol, tb, gamma),
                analysis::tree_backup_oracle(oe, t0, tb.tb_steps, gamma, tb.lambda_tb), 1e-9);
  }
}

TEST(TreeBackup, RejectsMissingBehaviourProbabilities) {
  Rng rng(1);
  critic::DecomposedCritic critic(config(2, 2, 1), rng);
  StochasticPolicySet pol(2, 1, 2, {4}, rng);
  auto ep = random_episode(rng, 2, 2, 2, 1, 1);
  ep.steps[1].behavior_probs.clear();
  EXPECT_THROW(tb_target(ep, 0, critic, pol, TbConfig{}, 0.9), DataError);
  ep.steps[1].behavior_probs = {0.0, 1.0};
  EXPECT_THROW(tb_target(ep, 0, critic, pol, TbConfig{}, 0.9), DataError);
}

TEST(OnPolicyTarget, EqualsForwardLambdaReturn) {
  Rng rng(5);
  for (int m = 0; m < 200; ++m) {
    const int T = 1 + static_cast<int>(uniform_index(rng, 10));
    EpisodeTerms e;
    for (int t = 0; t < T; ++t) {
      e.q.push_back(normal(rng));
      e.rewards.push_back(normal(rng));
      e.pi_joint.push_back(1.0);
    }
    e.expected.assign(T + 1, 0.0);
    e.expected[T] = m % 2 ? normal(rng) : 0.0;
    const double gamma = uniform(rng, 0.5, 1.0), lambda = uniform01(rng);
    const int t0 = static_cast<int>(uniform_index(rng, T));
    EXPECT_NEAR(on_target_from_terms(e, t0, gamma, lambda),
                analysis::lambda_return_oracle(e.rewards, e.q, e.expected[T], t0, gamma, lambda), 1e-10);
  }
}

TEST(OnPolicyTarget, LambdaZeroIsOneStepTd) {
  EpisodeTerms e;
  e.q = {1.0, 2.0, 4.0};
  e.rewards = {0.5, 0.25, 1.0};
  e.expected = {0.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(on_target_from_terms(e, 0, 0.9, 0.0), 0.5 + 0.9 * 2.0, 1e-12);
  EXPECT_NEAR(on_target_from_terms(e, 2, 0.9, 0.0), 1.0, 1e-12);
}

TEST(AristocratUtility, IsCentredUnderThePolicy) {
  Rng rng(2);
  for (int m = 0; m < 20; ++m) {
    const Vector q = randn(rng, 5);
    Vector pi = randn(rng, 5).array().exp();
    pi /= pi.sum();
    const double k = uniform(rng, 0.1, 2.0);
    double mean = 0.0;
    for (int a = 0; a < 5; ++a) mean += pi[a] * aristocrat_utility(k, q, pi, a);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(aristocrat_utility(k, q, pi, 0) - aristocrat_utility(k, q, pi, 1), k * (q[0] - q[1]), 1e-12);
  }
}

// Agent i's decomposed gradient reads only (s, a_i): changing what the
// other agents did leaves it unchanged.
TEST(ActorGradient, DependsOnlyOnOwnAction) {
  Rng rng(4);
  const int n = 3, A = 4;
  critic::DecomposedCritic critic(config(n, A, 2), rng);
  StochasticPolicySet pol(n, 2, A, {6}, rng);
  auto ep = random_episode(rng, 4, n, A, 2, 2);
  auto other = ep;
  for (auto& st : other.steps) st.actions[1] = (st.actions[1] + 1) % A;
  const auto g = actor_gradient({&ep}, 0, critic, pol);
  const auto h = actor_gradient({&other}, 0, critic, pol);
  for (int i : {0, 2})
    for (std::size_t t = 0; t < g[i].size(); ++t) EXPECT_EQ(g[i][t], h[i][t]);
  double diff = 0.0;
  for (std::size_t t = 0; t < g[1].size(); ++t) diff += (g[1][t] - h[1][t]).norm();
  EXPECT_GT(diff, 0.0);
}

TEST(ActorGradient, EqualsWeightedLogProbGradient) {
  Rng rng(9);
  const int n = 2, A = 3;
  critic::DecomposedCritic critic(config(n, A, 2), rng);
  StochasticPolicySet pol(n, 2, A, {6}, rng);
  const auto ep = random_episode(rng, 5, n, A, 2, 2);
  const auto g = actor_gradient({&ep}, 0, critic, pol);
  const int B = ep.length();
  Matrix s(2, B), x(2, B);
  std::vector<int> acts(B);
  for (int b = 0; b < B; ++b) {
    s.col(b) = ep.steps[b].state;
    x.col(b) = ep.steps[b].observations[1];
    acts[b] = ep.steps[b].actions[1];
  }
  const auto pass = critic.forward_values(s);
  RowVector coeff(B);
  for (int b = 0; b < B; ++b) coeff[b] = pass.k(1, b) * pass.values[1](acts[b], b) / B;
  const auto ref = pol.log_prob_grad(1, x, acts, coeff);
  for (std::size_t t = 0; t < ref.size(); ++t) EXPECT_TRUE(g[1][t].isApprox(ref[t], 1e-12));
}

TEST(ActorGradient, RejectsStaleEpisodes) {
  Rng rng(1);
  critic::DecomposedCritic critic(config(2, 2, 1), rng);
  StochasticPolicySet pol(2, 1, 2, {4}, rng);
  auto ep = random_episode(rng, 2, 2, 2, 1, 1);
  ep.policy_version = 3;
  EXPECT_THROW(actor_gradient({&ep}, 4, critic, pol), DataError);
}

TEST(EpsilonSchedule, LinearAnneal) {
  EpsilonSchedule e{1.0, 0.1, 100};
  EXPECT_DOUBLE_EQ(e.at(0), 1.0);
  EXPECT_DOUBLE_EQ(e.at(50), 0.55);
  EXPECT_DOUBLE_EQ(e.at(1000), 0.1);
  const Vector pi = (Vector(2) << 1.0, 0.0).finished();
  EXPECT_TRUE(epsilon_mixture(pi, 0.2).isApprox((Vector(2) << 0.9, 0.1).finished()));
}

TEST(CriticUpdate, KappaSelectsTheLossTerms) {
  Rng rng(12);
  critic::DecomposedCritic critic(config(2, 3, 2), rng);
  StochasticPolicySet pol(2, 2, 3, {4}, rng);
  const auto ep = random_episode(rng, 3, 2, 3, 2, 2);
  nn::RmsProp opt;
  CriticUpdateOptions cu;
  cu.tb.kappa = 1.0;
  auto loss = critic_loss_and_update(critic, opt, {{&ep}, {}}, pol, cu, nullptr, false);
  EXPECT_GT(loss.tb, 0.0);
  EXPECT_EQ(loss.on, 0.0);
  EXPECT_DOUBLE_EQ(loss.total, loss.tb);
  cu.tb.kappa = 0.0;
  loss = critic_loss_and_update(critic, opt, {{}, {&ep}}, pol, cu, nullptr, false);
  EXPECT_EQ(loss.tb, 0.0);
  EXPECT_DOUBLE_EQ(loss.total, loss.on);
  cu.tb.kappa = 0.5;
  EXPECT_THROW(critic_loss_and_update(critic, opt, {{&ep}, {}}, pol, cu), StateError);
}

TEST(CriticUpdate, RepeatedStepsFitAFixedBatch) {
  Rng rng(13);
  critic::DecomposedCritic critic(config(2, 3, 2), rng);
  StochasticPolicySet pol(2, 2, 3, {4}, rng);
  auto ep = random_episode(rng, 1, 2, 3, 2, 2);
  ep.terminated = true;
  nn::RmsProp opt({1e-2, 0.99, 1e-8});
  CriticUpdateOptions cu;
  cu.tb.kappa = 0.5;
  const double first = critic_loss_and_update(critic, opt, {{&ep}, {&ep}}, pol, cu).total;
  double last = first;
  for (int k = 0; k < 300; ++k) last = critic_loss_and_update(critic, opt, {{&ep}, {&ep}}, pol, cu).total;
  EXPECT_LT(last, 1e-2 * first);
}

TEST(StochasticDop, SameSeedSameMetrics) {
  envs::MatrixGame env;
  StochasticConfig cfg;
  cfg.critic_hidden = {16};
  cfg.actor_hidden = {16};
  RunSettings rs{"t", 3, 400, 100, 1, 0, false};
  auto rows = [&] {
    StochasticDop dop(env, cfg, rs);
    harness::MetricBuffer buf;
    dop.run(buf.sink());
    std::string s;
    for (const auto& r : buf.records) {
      EXPECT_TRUE(r.eval_return.has_value());
      s += harness::csv_row(r) + "\n";
    }
    EXPECT_EQ(buf.records.size(), 4u);
    return s;
  };
  EXPECT_EQ(rows(), rows());
}

TEST(StochasticDop, RejectsContinuousEnvironments) {
  envs::Mill mill;
  EXPECT_THROW(StochasticDop(mill, StochasticConfig{}, RunSettings{}), ConfigError);
}
