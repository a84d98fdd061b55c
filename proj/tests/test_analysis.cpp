#include <gtest/gtest.h>

#include "dop/analysis/oracles.hpp"
#include "dop/analysis/policy_value.hpp"
#include "dop/analysis/properties.hpp"
#include "dop/analysis/variance.hpp"

using namespace dop;
using namespace dop::analysis;

TEST(PolicyValue, LinearSolveAgreesWithValueIteration) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto mdp = envs::random_tabular(seed, 4, 2, 3);
    Rng rng(seed + 100);
    const auto pi = random_softmax_policy(rng, 4, 2, 3);
    const auto pv = exact_policy_value(mdp, pi);
    EXPECT_LT((pv.V - value_iteration(mdp, pi)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(bellman_residual(mdp, pi, pv.Q), 1e-10);
    EXPECT_NEAR(pv.J, mdp.initial.dot(pv.V), 1e-12);
    EXPECT_NEAR(pv.occupancy.sum(), 1.0 / (1.0 - mdp.gamma), 1e-9);
  }
}

TEST(PolicyValue, LocalValuesMarginaliseOtherAgents) {
  const auto mdp = envs::random_tabular(3, 2, 3, 2);
  Rng rng(1);
  const auto pi = random_softmax_policy(rng, 2, 3, 2);
  const auto pv = exact_policy_value(mdp, pi);
  for (int s = 0; s < 2; ++s) {
    const auto ps = policy_at(pi, s);
    const auto local = brute_force_local_values(
        [&](const JointDiscrete& a) { return pv.Q(s, envs::flatten_joint(a, 2)); }, ps);
    for (int i = 0; i < 3; ++i)
      for (int a = 0; a < 2; ++a) EXPECT_NEAR(pv.Qi[i](s, a), local[i][a], 1e-12);
  }
}

TEST(PolicyValue, DeterministicSingleStateByHand) {
  envs::TabularDecMDP m;
  m.n_states = 1;
  m.n_agents = 2;
  m.n_actions = 2;
  m.gamma = 0.5;
  m.transition.assign(4, Vector::Ones(1));
  m.reward = (Matrix(1, 4) << 1.0, 2.0, 3.0, 4.0).finished();
  m.initial = Vector::Ones(1);
  // both agents always play action 1 -> joint index 3, reward 4
  const TabularPolicy pi{(Matrix(1, 2) << 0.0, 1.0).finished(), (Matrix(1, 2) << 0.0, 1.0).finished()};
  const auto pv = exact_policy_value(m, pi);
  EXPECT_NEAR(pv.J, 8.0, 1e-12);
  EXPECT_NEAR(pv.Q(0, 0), 1.0 + 0.5 * 8.0, 1e-12);
  EXPECT_THROW(exact_policy_value(m, {pi[0]}), ShapeError);
}

TEST(BruteForce, ExpectationCountsEveryJointAction) {
  const std::vector<Vector> pi{(Vector(2) << 0.25, 0.75).finished(), (Vector(2) << 0.4, 0.6).finished()};
  long reads = 0;
  const double e = brute_force_expectation([](const JointDiscrete& a) { return a[0] * 10.0 + a[1]; }, pi, &reads);
  EXPECT_EQ(reads, 4);
  EXPECT_NEAR(e, 7.5 + 0.6, 1e-12);
  EXPECT_NEAR(joint_prob(pi, {1, 1}), 0.45, 1e-15);
}

TEST(TraceCovariance, HandComputed) {
  // x: (0,0), (2,0), (4,6): var_x = 4, var_y = 12
  const std::vector<Vector> xs{Vector::Zero(2), (Vector(2) << 2, 0).finished(), (Vector(2) << 4, 6).finished()};
  EXPECT_NEAR(trace_covariance(xs), 16.0, 1e-12);
  EXPECT_EQ(trace_covariance({Vector::Constant(3, 1e9), Vector::Constant(3, 1e9)}), 0.0);
  EXPECT_THROW(trace_covariance({Vector::Zero(2)}), InputError);
}

TEST(GradientVariance, WeightsOwnActionsByPolicy) {
  const std::vector<Vector> pi{(Vector(2) << 0.25, 0.75).finished()};
  Rng rng(0);
  // Action 0: gradient +-1 alternating (variance > 0); action 1: constant.
  int flip = 0;
  const auto rep = gradient_variance(
      pi,
      [&](int, int a, Rng&) {
        flip ^= 1;
        return Vector::Constant(1, a == 0 ? (flip ? 1.0 : -1.0) : 3.0);
      },
      4, rng);
  ASSERT_EQ(rep.per_agent.size(), 1u);
  EXPECT_NEAR(rep.per_action[0][0], 4.0 / 3.0, 1e-12);
  EXPECT_EQ(rep.per_action[0][1], 0.0);
  EXPECT_NEAR(rep.per_agent[0], 0.25 * 4.0 / 3.0, 1e-12);
  EXPECT_FALSE(rep.reportable());
}

TEST(Bias, MeanAbsoluteError) {
  const auto r = bias_report((Vector(3) << 1, 2, 3).finished(), (Vector(3) << 0, 2, 5).finished());
  EXPECT_NEAR(r.mean_abs_error, 1.0, 1e-15);
  EXPECT_EQ(r.count, 3);
}

TEST(OrderPreservation, HoldsOnRandomInstances) {
  const auto rep = fact1_sweep(77, 10);
  EXPECT_EQ(rep.instances, 10);
  EXPECT_GT(rep.pairs, 0);
  EXPECT_EQ(rep.violations, 0);
}

TEST(OrderPreservation, DetectsAReversal) {
  const std::vector<Vector> truth{(Vector(2) << 1.0, 2.0).finished()};
  const std::vector<Vector> fitted{(Vector(2) << 2.0, 1.0).finished()};
  EXPECT_EQ(order_preservation_check(fitted, truth), 1);
}

TEST(PolicyImprovement, NoFailuresWhenPreconditionHolds) {
  const auto rep = prop1_sweep(5, 10, 1e-4);
  EXPECT_EQ(rep.instances, 10);
  EXPECT_GT(rep.checked, 0);
  EXPECT_EQ(rep.improvement_failures, 0);
}

TEST(LocalApproximation, ErrorIsQuadraticInRadius) {
  const auto rep = fact2_scaling(10);
  ASSERT_EQ(rep.ratios.size(), 2u);
  for (double r : rep.ratios) EXPECT_NEAR(r, 4.0, 0.5);
}
