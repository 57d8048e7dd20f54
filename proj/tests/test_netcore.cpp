// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "acdu/netcore.hpp"
#include "test_util.hpp"

using namespace acdu;

namespace {

NetworkParams linear(std::size_t in, std::size_t out) {
  NetworkParams p{{{in, out}, Activation::relu}, {{Tensor(out, in), Tensor(1, out)}}};
  return p;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  auto p = init_network({{3, 4, 2}, Activation::relu}, 7);
  for (auto& l : p.layers) {
    std::fill(l.weight.values.begin(), l.weight.values.end(), 0.0);
    std::fill(l.bias.values.begin(), l.bias.values.end(), 0.0);
  }
  const Tensor out = forward(p, Tensor::from_rows({{1, -2, 3}, {0.5, 0.5, 0.5}}));
  ASSERT_EQ(out.rows(), 2u);
  ASSERT_EQ(out.cols(), 2u);
  for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLinearLayer) {
  auto p = linear(2, 2);
  p.layers[0].weight = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor out = forward(p, Tensor::from_rows({{1, 2}}));
  EXPECT_DOUBLE_EQ(out.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 2.0);
}

TEST(Forward, HandComputedTwoLayer) {
  NetworkParams p{{{2, 2, 2}, Activation::relu}, {}};
  p.layers.push_back({Tensor::from_rows({{1, 2}, {-3, 4}}), Tensor::from_rows({{0.5, 0.25}})});
  p.layers.push_back({Tensor::from_rows({{2, -1}, {1, 1}}), Tensor::from_rows({{0.1, -0.2}})});
  // h = relu([1*1 + 0.5, -3*1 + 0.25]) = [1.5, 0]; out = [2*1.5 + 0.1, 1.5 - 0.2]
  const Tensor out = forward(p, Tensor::from_rows({{1, 0}}));
  EXPECT_NEAR(out.at(0, 0), 3.1, 1e-12);
  EXPECT_NEAR(out.at(0, 1), 1.3, 1e-12);
}

TEST(Forward, WidthMismatchIsConfigError) {
  auto p = linear(3, 2);
  EXPECT_THROW(forward(p, Tensor(1, 2)), ConfigError);
}

TEST(Softmax, ClosedForms) {
  auto a = softmax(std::vector<double>{0, 0});
  EXPECT_NEAR(a[0], 0.5, 1e-12);
  auto b = softmax(std::vector<double>{std::log(3.0), 0});
  EXPECT_NEAR(b[0], 0.75, 1e-12);
  EXPECT_NEAR(b[1], 0.25, 1e-12);
  auto c = softmax(std::vector<double>{1000, 0});
  EXPECT_NEAR(c[0], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(c[1]));
  EXPECT_NEAR(c[1], 0.0, 1e-12);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(5);
    std::normal_distribution<double> n(0, 5);
    for (auto& v : z) v = n(rng);
    auto p = softmax(z);
    for (auto& v : z) v += 17.25;
    auto q = softmax(z);
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s += p[i];
      EXPECT_NEAR(p[i], q[i], 1e-12);
      EXPECT_GT(p[i], 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_EQ(argmax(p), argmax(q));
  }
}

TEST(CrossEntropy, ClosedForms) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{1.0, 0.0}, 0), 0.0, 1e-6);
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.5, 0.5}, 1), std::log(2.0), 1e-12);
  const double e2 = std::exp(-2.0);
  EXPECT_NEAR(cross_entropy(std::vector<double>{e2, 1 - e2}, 0), 2.0, 1e-12);
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.0, 1.0}, 0), -std::log(kProbEps), 1e-9);
  EXPECT_THROW(cross_entropy(std::vector<double>{0.5, 0.5}, 2), InputError);
}

TEST(KlDivergence, ClosedForms) {
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}), 0.0, 1e-15);
  EXPECT_NEAR(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-6);
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.75, 0.25}, std::vector<double>{0.25, 0.75}), 0.5 * std::log(3.0),
              1e-12);
  EXPECT_NEAR(0.5 * std::log(3.0), 0.5493, 1e-4);
  EXPECT_THROW(kl_divergence(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), InputError);
}

TEST(KlDivergence, NonNegativeOnRandomPairs) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const Tensor p = testutil::random_probs(1, 4, rng);
    const Tensor q = testutil::random_probs(1, 4, rng);
    EXPECT_GE(kl_divergence(p.row(0), q.row(0)), 0.0);
  }
}

TEST(Gradient, ConstantLossGivesZeroGradients) {
  auto p = init_network({{3, 5, 2}, Activation::tanh}, 1);
  Objective constant = [](const Tensor& logits) { return LossValue{4.0, Tensor(logits.rows(), logits.cols())}; };
  const auto lg = loss_and_gradient(p, Tensor::from_rows({{1, 2, 3}}), constant);
  EXPECT_EQ(lg.value, 4.0);
  for (const auto& l : lg.grads) {
    for (double v : l.weight.values) EXPECT_EQ(v, 0.0);
    for (double v : l.bias.values) EXPECT_EQ(v, 0.0);
  }
}

TEST(Gradient, LinearSquaredLossClosedForm) {
  auto p = linear(3, 1);
  p.layers[0].weight = Tensor::from_rows({{0.5, -1.0, 2.0}});
  const Tensor x = Tensor::from_rows({{1.0, 2.0, 3.0}});
  const double y = 1.5;
  const auto lg = loss_and_gradient(p, x, squared_error(Tensor::from_rows({{y}})));
  const double r = 0.5 - 2.0 + 6.0 - y;  // w.x - y
  EXPECT_NEAR(lg.value, r * r, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(lg.grads[0].weight.values[i], 2 * r * x.values[i], 1e-12);
  EXPECT_NEAR(lg.grads[0].bias.values[0], 2 * r, 1e-12);
}

TEST(Gradient, RandomNetsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto p = init_network({{4, 6, 5, 3}, Activation::tanh}, seed);
    const Tensor x = testutil::random_tensor(5, 4, rng);
    const Tensor t = testutil::random_tensor(5, 3, rng);
    EXPECT_LT(testutil::gradient_check(p, x, squared_error(t)), 1e-4) << "seed " << seed;
  }
}

TEST(Gradient, ReluNetMatchesFiniteDifferences) {
  Rng rng(5);
  auto p = init_network({{3, 8, 2}, Activation::relu}, 5);
  const Tensor x = testutil::random_tensor(4, 3, rng);
  EXPECT_LT(testutil::gradient_check(p, x, squared_error(testutil::random_tensor(4, 2, rng))), 1e-4);
}

TEST(Sgd, ZeroGradientNoDecayIsNoOp) {
  auto p = init_network({{2, 3, 2}, Activation::relu}, 2);
  const auto before = p;
  auto opt = make_optimizer(p, 0.1, 0.9, 0.0, 10);
  sgd_step(p, zeros_like(p), opt, 1);
  EXPECT_EQ(p, before);
}

TEST(Sgd, OneStepArithmetic) {
  auto p = linear(1, 1);
  auto opt = make_optimizer(p, 0.1, 0.0, 0.0, 10);
  auto g = zeros_like(p);
  g[0].weight.values[0] = 1.0;
  sgd_step(p, g, opt, 1);
  EXPECT_NEAR(p.layers[0].weight.values[0], -0.1, 1e-15);
}

TEST(Sgd, MomentumAndWeightDecay) {
  auto p = linear(1, 1);
  p.layers[0].weight.values[0] = 1.0;
  auto opt = make_optimizer(p, 0.1, 0.5, 0.1, 10);
  auto g = zeros_like(p);
  g[0].weight.values[0] = 1.0;
  sgd_step(p, g, opt, 1);  // v = 1 + 0.1 = 1.1; w = 1 - 0.11
  EXPECT_NEAR(p.layers[0].weight.values[0], 0.89, 1e-12);
  sgd_step(p, g, opt, 1);  // v = 0.55 + 1 + 0.089 = 1.639
  EXPECT_NEAR(p.layers[0].weight.values[0], 0.89 - 0.1639, 1e-12);
}

TEST(Sgd, StepDecaySchedule) {
  auto p = linear(1, 1);
  auto opt = make_optimizer(p, 0.02, 0.9, 5e-4, 150);
  EXPECT_DOUBLE_EQ(opt.lr_at(149), 0.02);
  EXPECT_NEAR(opt.lr_at(150), 0.002, 1e-15);
}

TEST(Sgd, FrozenLayersUntouched) {
  auto p = init_network({{2, 3, 2}, Activation::relu}, 4);
  const auto before = p;
  auto opt = make_optimizer(p, 0.1, 0.9, 0.0, 10);
  auto g = zeros_like(p);
  for (auto& l : g) std::fill(l.weight.values.begin(), l.weight.values.end(), 1.0);
  sgd_step(p, g, opt, 1, {false, true});
  EXPECT_EQ(p.layers[0], before.layers[0]);
  EXPECT_NE(p.layers[1], before.layers[1]);
}

TEST(Optimizer, RejectsInvalidSettings) {
  auto p = linear(1, 1);
  EXPECT_THROW(make_optimizer(p, 0.0, 0.9, 0, 1), ConfigError);
  EXPECT_THROW(make_optimizer(p, 0.1, 1.0, 0, 1), ConfigError);
  EXPECT_THROW(make_optimizer(p, 0.1, 0.9, -1, 1), ConfigError);
}

TEST(Init, GlorotBoundsAndDeterminism) {
  const Architecture arch{{10, 20, 3}, Activation::relu};
  const auto a = init_network(arch, 9);
  EXPECT_EQ(a, init_network(arch, 9));
  EXPECT_NE(a, init_network(arch, 10));
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : a.layers[0].weight.values) EXPECT_LE(std::abs(v), bound);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto p = init_network({{4, 7, 3}, Activation::tanh}, 21);
  p.layers[0].weight.values[0] = 0.1 + 0.2;  // not representable as a short decimal
  p.layers[1].bias.values[2] = -1e-300;
  std::stringstream ss;
  save_checkpoint(ss, p);
  const auto q = load_checkpoint(ss);
  EXPECT_EQ(p, q);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("acdu-network 2\n");
  EXPECT_THROW(load_checkpoint(bad), IngestionError);
  auto p = init_network({{2, 2}, Activation::relu}, 1);
  std::stringstream ss;
  save_checkpoint(ss, p);
  std::string text = ss.str();
  text.resize(text.size() - 10);
  std::stringstream truncated(text);
  EXPECT_THROW(load_checkpoint(truncated), IngestionError);
}

TEST(Helpers, PerSampleLossesAndAccuracy) {
  auto p = linear(2, 2);
  p.layers[0].weight = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor x = Tensor::from_rows({{2, 0}, {0, 2}, {1, 1}});
  const std::vector<std::size_t> y{0, 0, 1};
  EXPECT_NEAR(accuracy(p, x, y), 1.0 / 3.0, 1e-12);  // the tie row argmaxes to class 0
  const auto l = per_sample_losses(p, x, y);
  EXPECT_NEAR(l[2], std::log(2.0), 1e-12);
}
