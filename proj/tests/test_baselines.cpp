#include <gtest/gtest.h>

#include "dop/baselines/coma.hpp"
#include "dop/baselines/common_tree_backup.hpp"
#include "dop/baselines/maddpg.hpp"
#include "dop/envs/matrix_game.hpp"
#include "dop/harness/metrics.hpp"

using namespace dop;
using namespace dop::baselines;

TEST(ComaAdvantage, HandComputed) {
  Matrix cf(3, 2);
  cf << 1.0, 0.0,
        2.0, 0.0,
        4.0, 0.0;
  const Vector pi = (Vector(3) << 0.5, 0.25, 0.25).finished();
  // 2 - (0.5 + 0.5 + 1)
  EXPECT_DOUBLE_EQ(coma_advantage(cf, 0, 1, pi), 0.0);
  EXPECT_DOUBLE_EQ(coma_advantage(cf, 0, 2, pi), 2.0);
  EXPECT_DOUBLE_EQ(coma_advantage(cf, 1, 0, pi), 0.0);
  EXPECT_THROW(coma_advantage(cf, 0, 0, Vector::Ones(2)), ShapeError);
}

TEST(ComaAdvantage, CounterfactualPassMatchesScalarQueries) {
  Rng rng(3);
  critic::JointCriticConfig jc;
  jc.n_agents = 3;
  jc.n_actions = 4;
  jc.state_dim = 2;
  jc.hidden = {8};
  jc.mode = critic::JointMode::Counterfactual;
  critic::JointCritic critic(jc, rng);
  const Vector s = (Vector(2) << 0.3, -0.2).finished();
  const JointDiscrete a{1, 3, 0};
  const Vector pi = Vector::Constant(4, 0.25);
  const Matrix cf = critic.net(critic::Params::Online).forward(critic.encode_counterfactual(Matrix(s), {a}, 1));
  EXPECT_NEAR(coma_advantage(critic, s, a, 1, pi), cf(3, 0) - cf.col(0).mean(), 1e-12);
}

TEST(Gumbel, ConditionalNoiseHitsTheRequestedArgmax) {
  Rng rng(7);
  const Vector pi = (Vector(4) << 0.7, 0.2, 0.09, 0.01).finished();
  const Vector lp = safe_log(pi);
  for (int k = 0; k < 4; ++k)
    for (int m = 0; m < 200; ++m) {
      Eigen::Index arg;
      (lp + gumbel_noise_given_argmax(lp, k, rng)).maxCoeff(&arg);
      EXPECT_EQ(arg, k);
    }
}

// Unconditional Gumbel-max draws follow pi.
TEST(Gumbel, MaxTrickSamplesThePolicy) {
  Rng rng(8);
  const Vector pi = (Vector(3) << 0.6, 0.3, 0.1).finished();
  const Vector lp = safe_log(pi);
  Vector counts = Vector::Zero(3);
  const int N = 60000;
  for (int m = 0; m < N; ++m) {
    Eigen::Index arg;
    (lp + gumbel_noise(3, rng)).maxCoeff(&arg);
    counts[arg] += 1.0;
  }
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(counts[a] / N, pi[a], 0.01);
}

TEST(Gumbel, SoftmaxBackwardMatchesFiniteDifferences) {
  Rng rng(9);
  const Vector logits = (Vector(4) << 0.1, -0.4, 1.2, 0.3).finished();
  const Vector g = gumbel_noise(4, rng);
  const Vector u = (Vector(4) << 1.0, -2.0, 0.5, 3.0).finished();
  const double T = 0.7;
  const Vector y = softmax_tempered(logits + g, T);
  EXPECT_NEAR(y.sum(), 1.0, 1e-12);
  const Vector analytic = gumbel_softmax_backward(y, u, T);
  for (int k = 0; k < 4; ++k) {
    Vector up = logits, down = logits;
    up[k] += 1e-6;
    down[k] -= 1e-6;
    const double fd = (u.dot(softmax_tempered(up + g, T)) - u.dot(softmax_tempered(down + g, T))) / 2e-6;
    EXPECT_NEAR(analytic[k], fd, 1e-7);
  }
}

TEST(CommonTreeBackup, VariantsOnlyChangeTheExpectation) {
  algo::StochasticConfig base;
  base.tb.kappa = 0.3;
  const auto s = ablation_common_tree_backup(base, 50);
  EXPECT_EQ(s.expectation.mode, algo::ExpectationMode::Sampled);
  EXPECT_EQ(s.expectation.samples, 50);
  EXPECT_EQ(s.tb.kappa, 0.3);
  EXPECT_EQ(ablation_exhaustive_tree_backup(base).expectation.mode, algo::ExpectationMode::Exhaustive);
  EXPECT_THROW(ablation_common_tree_backup(base, 0), ConfigError);
}

namespace {

template <typename T, typename Cfg>
std::string run_rows(const Cfg& cfg) {
  envs::MatrixGame env;
  T trainer(env, cfg, algo::RunSettings{"b", 5, 300, 100, 1, 2, false});
  harness::MetricBuffer buf;
  trainer.run(buf.sink());
  std::string s;
  for (const auto& r : buf.records) s += harness::csv_row(r) + "\n";
  return s;
}

}  // namespace

TEST(Coma, ReproducibleUnderAFixedSeed) {
  ComaConfig cfg;
  cfg.critic_hidden = {16};
  cfg.actor_hidden = {16};
  const auto a = run_rows<Coma>(cfg);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run_rows<Coma>(cfg));
}

TEST(Maddpg, ReproducibleUnderAFixedSeed) {
  MaddpgConfig cfg;
  cfg.critic_hidden = {16};
  cfg.actor_hidden = {16};
  cfg.batch = 8;
  const auto a = run_rows<MaddpgDiscrete>(cfg);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run_rows<MaddpgDiscrete>(cfg));
}
