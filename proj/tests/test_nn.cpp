#include <sstream>

#include <gtest/gtest.h>

#include "dop/nn/checkpoint.hpp"
#include "dop/nn/grad_check.hpp"
#include "dop/nn/optim.hpp"

using namespace dop;
using namespace dop::nn;

namespace {

Matrix random_input(Rng& rng, int rows, int cols) {
  Matrix x(rows, cols);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
  return x;
}

}  // namespace

class MlpGradient : public ::testing::TestWithParam<Activation> {};

TEST_P(MlpGradient, BackwardMatchesCentralDifferences) {
  Rng rng(5);
  const Mlp net({3, 7, 5, 4}, GetParam(), rng);
  const Matrix x = random_input(rng, 3, 6);
  EXPECT_LT(grad_check(net, x, 1), 1e-4);
  const Matrix up = random_input(rng, 4, 6);
  EXPECT_LT(input_grad_check(net, x, up), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Outputs, MlpGradient,
                         ::testing::Values(Activation::Identity, Activation::Absolute, Activation::Softmax,
                                           Activation::Tanh));

TEST(Mlp, SoftmaxColumnsSumToOne) {
  Rng rng(2);
  const Mlp net({2, 8, 5}, Activation::Softmax, rng);
  const Matrix p = net.forward(random_input(rng, 2, 10));
  for (Eigen::Index c = 0; c < p.cols(); ++c) EXPECT_NEAR(p.col(c).sum(), 1.0, 1e-12);
  EXPECT_THROW(net.forward(Matrix(Matrix::Zero(3, 1))), ShapeError);
}

TEST(Mlp, ZerosNetworkOutputsZero) {
  const Mlp net = Mlp::zeros({3, 4, 2}, Activation::Identity);
  EXPECT_EQ(net.forward(Matrix(Matrix::Ones(3, 2))), Matrix::Zero(2, 2));
}

TEST(RmsProp, TwoStepsByHand) {
  ParamSet p({Matrix::Constant(1, 2, 1.0)});
  Grad g({(Matrix(1, 2) << 0.5, -2.0).finished()});
  RmsProp opt({0.1, 0.9, 1e-8});
  opt.step(p, g);
  // v = 0.1 g^2 ; p -= 0.1 g / sqrt(v)
  const double v0 = 0.1 * 0.25, v1 = 0.1 * 4.0;
  double e0 = 1.0 - 0.1 * 0.5 / (std::sqrt(v0) + 1e-8);
  double e1 = 1.0 + 0.1 * 2.0 / (std::sqrt(v1) + 1e-8);
  EXPECT_NEAR(p[0](0, 0), e0, 1e-12);
  EXPECT_NEAR(p[0](0, 1), e1, 1e-12);
  opt.step(p, g);
  const double w0 = 0.9 * v0 + 0.1 * 0.25, w1 = 0.9 * v1 + 0.1 * 4.0;
  e0 -= 0.1 * 0.5 / (std::sqrt(w0) + 1e-8);
  e1 += 0.1 * 2.0 / (std::sqrt(w1) + 1e-8);
  EXPECT_NEAR(p[0](0, 0), e0, 1e-12);
  EXPECT_NEAR(p[0](0, 1), e1, 1e-12);
}

TEST(RmsProp, NonFiniteGradientIsATrainingError) {
  ParamSet p({Matrix::Zero(2, 2)});
  Grad g({Matrix::Constant(2, 2, std::nan(""))});
  RmsProp opt;
  EXPECT_THROW(opt.step(p, g), TrainingError);
  EXPECT_EQ(p[0], Matrix::Zero(2, 2));
}

TEST(SoftUpdate, Interpolates) {
  ParamSet target({Matrix::Zero(1, 1)}), online({Matrix::Constant(1, 1, 4.0)});
  soft_update(target, online, 0.25);
  EXPECT_DOUBLE_EQ(target[0](0, 0), 1.0);
  EXPECT_THROW(soft_update(target, online, 0.0), InputError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(9);
  const Mlp net({4, 6, 3}, Activation::Tanh, rng);
  Checkpoint ck;
  add_network(ck, "actor0", net);
  std::stringstream ss;
  write_checkpoint(ss, ck);
  const Checkpoint back = read_checkpoint(ss);
  ASSERT_EQ(back.manifest, ck.manifest);
  Mlp copy = Mlp::zeros({4, 6, 3}, Activation::Tanh);
  load_network(back, "actor0", copy);
  for (int l = 0; l < net.n_layers(); ++l) {
    EXPECT_EQ(copy.weight(l), net.weight(l));
    EXPECT_EQ(copy.bias(l), net.bias(l));
  }
  Mlp wrong = Mlp::zeros({4, 5, 3}, Activation::Tanh);
  EXPECT_THROW(load_network(back, "actor0", wrong), ShapeError);
}

TEST(Checkpoint, RejectsForeignInput) {
  std::stringstream ss("hello\n");
  EXPECT_THROW(read_checkpoint(ss), InputError);
}
