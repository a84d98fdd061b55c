#include <gtest/gtest.h>

#include "dop/algo/stochastic.hpp"
#include "dop/analysis/oracles.hpp"
#include "dop/critic/joint_critic.hpp"

using namespace dop;
using namespace dop::critic;

namespace {

Vector random_policy(Rng& rng, int A) {
  Vector z(A);
  for (int a = 0; a < A; ++a) z[a] = normal(rng, 0.0, 2.0);
  Vector p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

std::vector<JointDiscrete> all_joint(int n, int A) {
  std::vector<JointDiscrete> out;
  for (long j = 0; j < envs::joint_count(n, A); ++j) out.push_back(envs::unflatten_joint(j, n, A));
  return out;
}

CriticConfig small_config(int n, int A, bool per_agent, bool normalize) {
  CriticConfig cc;
  cc.n_agents = n;
  cc.n_actions = A;
  cc.state_dim = 2;
  cc.hidden = {8};
  cc.per_agent_networks = per_agent;
  cc.normalize_mixing = normalize;
  return cc;
}

}  // namespace

class DecomposedExpectation : public ::testing::TestWithParam<std::tuple<bool, bool>> {};

TEST_P(DecomposedExpectation, MatchesJointEnumeration) {
  const auto [per_agent, normalize] = GetParam();
  Rng rng(17);
  for (int m = 0; m < 25; ++m) {
    const int n = 2 + m % 3, A = 2 + m % 4;
    DecomposedCritic critic(small_config(n, A, per_agent, normalize), rng);
    Vector s(2);
    s << normal(rng), normal(rng);
    std::vector<Vector> pi;
    for (int i = 0; i < n; ++i) pi.push_back(random_policy(rng, A));
    const auto joints = all_joint(n, A);
    const auto pass = critic.forward(s.replicate(1, static_cast<Eigen::Index>(joints.size())), joints);
    const double truth = analysis::brute_force_expectation(
        [&](const JointDiscrete& a) { return pass.q_tot[envs::flatten_joint(a, A)]; }, pi);
    EXPECT_NEAR(critic.expected_q(s, pi), truth, 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Layouts, DecomposedExpectation,
                         ::testing::Combine(::testing::Bool(), ::testing::Bool()));

TEST(DecomposedCritic, EvalIsTheWeightedSum) {
  Rng rng(1);
  DecomposedCritic critic(small_config(3, 4, false, false), rng);
  Vector s(2);
  s << 0.3, -0.7;
  const JointDiscrete a{0, 3, 2};
  const CriticEval e = critic.eval(s, a);
  double sum = e.b;
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(e.k[i], 0.0);
    sum += e.k[i] * e.q_local[i];
  }
  EXPECT_NEAR(e.q_tot, sum, 1e-12);
}

TEST(DecomposedCritic, NormalisedMixingWeightsSumToOne) {
  Rng rng(4);
  DecomposedCritic critic(small_config(4, 3, true, true), rng);
  Matrix s(2, 5);
  s.setRandom();
  const auto pass = critic.forward_values(s);
  for (int b = 0; b < 5; ++b) {
    EXPECT_NEAR(pass.k.col(b).sum(), 1.0, 1e-12);
    EXPECT_GE(pass.k.col(b).minCoeff(), 0.0);
  }
}

TEST(DecomposedCritic, ReadCountIsLinearInAgents) {
  Rng rng(2);
  const int n = 3, A = 14;
  DecomposedCritic critic(small_config(n, A, false, true), rng);
  const std::vector<Vector> pi(n, Vector::Constant(A, 1.0 / A));
  const Vector s = Vector::Zero(2);
  ReadCounter direct;
  critic.expected_q(s, pi, Params::Online, &direct);
  EXPECT_EQ(direct.reads, n * A);

  const auto pass = critic.forward_values(Matrix(s));
  ReadCounter exhaustive;
  const double e = algo::expectation_at(critic, pass, 0, pi, {algo::ExpectationMode::Exhaustive, 0}, nullptr,
                                        &exhaustive);
  EXPECT_EQ(exhaustive.reads, A * A * A);
  EXPECT_NEAR(e, critic.expected_q(s, pi), 1e-10);
}

TEST(DecomposedCritic, SampledExpectationConverges) {
  Rng rng(8);
  DecomposedCritic critic(small_config(3, 4, false, true), rng);
  std::vector<Vector> pi;
  for (int i = 0; i < 3; ++i) pi.push_back(random_policy(rng, 4));
  const Vector s = Vector::Ones(2);
  const auto pass = critic.forward_values(Matrix(s));
  const double exact = critic.expected_q(s, pi);
  const double sampled =
      algo::expectation_at(critic, pass, 0, pi, {algo::ExpectationMode::Sampled, 200000}, &rng, nullptr);
  EXPECT_NEAR(sampled, exact, 5e-3);
}

TEST(DecomposedCritic, TargetCopyIsIndependent) {
  Rng rng(3);
  DecomposedCritic critic(small_config(2, 3, false, true), rng);
  const Vector s = Vector::Ones(2);
  const JointDiscrete a{1, 2};
  const double before = critic.eval(s, a, Params::Target).q_tot;
  auto refs = critic.param_refs();
  for (std::size_t t = 0; t < refs.size(); ++t) refs[t].array() += 0.1;
  EXPECT_EQ(critic.eval(s, a, Params::Target).q_tot, before);
  EXPECT_NE(critic.eval(s, a).q_tot, before);
  critic.sync_target();
  EXPECT_EQ(critic.eval(s, a, Params::Target).q_tot, critic.eval(s, a).q_tot);
}

TEST(DecomposedCritic, CheckpointRoundTrip) {
  Rng rng(6);
  DecomposedCritic a(small_config(3, 2, true, false), rng), b(small_config(3, 2, true, false), rng);
  b.restore(a.checkpoint());
  const Vector s = Vector::Constant(2, 0.4);
  const JointDiscrete j{1, 0, 1};
  EXPECT_EQ(a.eval(s, j).q_tot, b.eval(s, j).q_tot);
}

TEST(JointCritic, OneHotEncoding) {
  const auto enc = one_hot_joint({2, 0}, 3);
  ASSERT_EQ(enc.size(), 2u);
  EXPECT_EQ(enc[0], (Vector(3) << 0, 0, 1).finished());
  EXPECT_EQ(enc[1], (Vector(3) << 1, 0, 0).finished());
  EXPECT_THROW(one_hot_joint({3}, 3), InputError);
}
