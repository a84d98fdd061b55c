#include <gtest/gtest.h>

#include "dop/envs/aggregation.hpp"
#include "dop/envs/matrix_game.hpp"
#include "dop/envs/mill.hpp"
#include "dop/envs/tabular.hpp"

using namespace dop;
using namespace dop::envs;

TEST(MatrixGame, PaysTenOnlyForTheCoordinatedJointAction) {
  long wins = 0;
  for (long j = 0; j < joint_count(3, 14); ++j) {
    const auto a = unflatten_joint(j, 3, 14);
    const double r = MatrixGame::payoff(a);
    if (a == JointDiscrete{1, 5, 9}) {
      EXPECT_EQ(r, 10.0);
      ++wins;
    } else {
      EXPECT_EQ(r, -10.0);
    }
  }
  EXPECT_EQ(wins, 1);
}

TEST(MatrixGame, EpisodeIsOneStep) {
  MatrixGame env;
  Rng rng(0);
  env.reset(rng);
  const JointDiscrete a{1, 5, 9};
  const auto r = env.step(a);
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.reward, 10.0);
  EXPECT_EQ(env.t(), 1);
}

TEST(MatrixGame, RejectsBadActions) {
  EXPECT_THROW(MatrixGame::payoff(JointDiscrete{1, 5}), InputError);
  EXPECT_THROW(MatrixGame::payoff(JointDiscrete{1, 5, 14}), InputError);
  MatrixGame env;
  Environment& base = env;
  EXPECT_THROW(base.step(JointContinuous{}), UnsupportedError);
}

TEST(JointIndex, FlattenRoundTrip) {
  for (long j = 0; j < joint_count(3, 4); ++j) EXPECT_EQ(flatten_joint(unflatten_joint(j, 3, 4), 4), j);
}

TEST(Aggregation, MovesAreClippedAndScaled) {
  Aggregation::Params p;
  p.n_agents = 2;
  Aggregation env(p);
  env.set_positions({Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.95, -0.5)});
  env.step(JointContinuous{Vector::Constant(2, -1.0), Vector::Constant(2, 5.0)});
  EXPECT_NEAR(env.positions()[0][0], 0.3, 1e-12);
  EXPECT_NEAR(env.positions()[0][1], 0.3, 1e-12);
  EXPECT_NEAR(env.positions()[1][0], 1.0, 1e-12);  // wall
  EXPECT_NEAR(env.positions()[1][1], -0.3, 1e-12);
}

TEST(Aggregation, SuccessAndTimeout) {
  Aggregation::Params p;
  p.n_agents = 2;
  Aggregation env(p);
  env.set_positions({Eigen::Vector2d(0.05, 0.0), Eigen::Vector2d(0.0, 0.25)});
  Vector stay = Vector::Zero(2), down(2);
  down << 0.0, -1.0;
  auto r = env.step(JointContinuous{stay, down});
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.reward, 10.0);

  env.set_positions({Eigen::Vector2d(0.9, 0.9), Eigen::Vector2d(0.9, 0.9)});
  env.set_t(p.episode_limit - 1);
  r = env.step(JointContinuous{stay, stay});
  EXPECT_TRUE(r.truncated);
  EXPECT_FALSE(r.terminated);
  EXPECT_EQ(r.reward, -10.0);
  EXPECT_EQ(r.observations.size(), 2u);
  EXPECT_EQ(r.state.size(), 4);
}

TEST(Mill, RewardSchedule) {
  Mill env;
  Rng rng(0);
  env.reset(rng);
  JointContinuous full(10, Vector::Constant(1, 1.0));
  // omega grows by 15 per step: 15, 30, 45 ...
  auto r = env.step(full);
  EXPECT_EQ(r.reward, 0.0);
  r = env.step(full);
  EXPECT_EQ(r.reward, 0.0);  // omega == 30 is not above 30
  r = env.step(full);
  EXPECT_EQ(r.reward, 3.0);
  double total = 3.0;
  for (int t = 3; t < 10; ++t) {
    r = env.step(full);
    total += r.reward;
  }
  EXPECT_TRUE(r.terminated);
  EXPECT_DOUBLE_EQ(env.omega(), 150.0);
  EXPECT_EQ(total, 8 * 3.0 + 10.0);
}

TEST(Mill, OpposingForcesFailAtTheLimit) {
  Mill env;
  Rng rng(0);
  env.reset(rng);
  JointContinuous half;
  for (int i = 0; i < 10; ++i) half.push_back(Vector::Constant(1, i % 2 ? 1.0 : -1.0));
  StepResult r;
  for (int t = 0; t < 10; ++t) r = env.step(half);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.reward, -10.0);
  EXPECT_EQ(env.omega(), 0.0);
}

TEST(Tabular, RandomInstanceIsValidAndSeeded) {
  const auto a = random_tabular(11, 3, 2, 3);
  const auto b = random_tabular(11, 3, 2, 3);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.reward, b.reward);
  EXPECT_THROW(random_tabular(0, 10, 10, 10), ConfigError);
}

// Successive resets must continue the caller's stream, not replay it.
TEST(Tabular, SuccessiveResetsDrawFreshStreams) {
  TabularEnv env(random_tabular(2, 5, 2, 2), 20);
  Rng rng(3);
  std::vector<std::vector<int>> paths;
  for (int e = 0; e < 8; ++e) {
    env.reset(rng);
    std::vector<int> path{env.state_index()};
    for (int t = 0; t < 20; ++t) {
      env.step(JointDiscrete{0, 1});
      path.push_back(env.state_index());
    }
    paths.push_back(path);
  }
  int distinct = 0;
  for (std::size_t e = 1; e < paths.size(); ++e) distinct += paths[e] != paths[0];
  EXPECT_GT(distinct, 0);
}

TEST(Tabular, EpisodeTruncatesAtLimit) {
  TabularEnv env(random_tabular(2, 2, 2, 2), 3);
  Rng rng(1);
  env.reset(rng);
  EXPECT_FALSE(env.step(JointDiscrete{0, 0}).done());
  EXPECT_FALSE(env.step(JointDiscrete{0, 0}).done());
  EXPECT_TRUE(env.step(JointDiscrete{0, 0}).truncated);
  EXPECT_THROW(env.step(JointDiscrete{0, 2}), InputError);
}
