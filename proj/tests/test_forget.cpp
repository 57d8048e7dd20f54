// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "acdu/coteach.hpp"
#include "acdu/forget.hpp"
#include "test_util.hpp"

using namespace acdu;

TEST(UnlearningLoss, ClosedForms) {
  const Tensor p = Tensor::from_rows({{0.3, 0.7}, {0.5, 0.5}});
  EXPECT_EQ(unlearning_loss(p, p, 0.05), 0.0);
  const Tensor ref = Tensor::from_rows({{1.0, 0.0}});
  const Tensor cur = Tensor::from_rows({{0.5, 0.5}});
  EXPECT_NEAR(unlearning_loss(ref, cur, 0.05), -0.0025 * std::log(2.0), 1e-9);
  EXPECT_NEAR(unlearning_loss(ref, cur, 0.05), -0.001733, 1e-6);
  EXPECT_NEAR(unlearning_loss(ref, cur, 0.1), 4.0 * unlearning_loss(ref, cur, 0.05), 1e-15);
}

TEST(UnlearningLoss, SumsOverBatchAndIsNonPositive) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Tensor a = testutil::random_probs(4, 3, rng);
    const Tensor b = testutil::random_probs(4, 3, rng);
    const double whole = unlearning_loss(a, b, 0.3);
    double parts = 0.0;
    for (std::size_t r = 0; r < 4; ++r) parts += -0.09 * kl_divergence(a.row(r), b.row(r));
    EXPECT_NEAR(whole, parts, 1e-12);
    EXPECT_LE(whole, 0.0);
  }
}

TEST(UnlearningLoss, Errors) {
  EXPECT_THROW(unlearning_loss(Tensor(2, 2, 0.5), Tensor(1, 2, 0.5), 0.05), InputError);
  EXPECT_THROW(unlearning_loss(Tensor(1, 2, 0.5), Tensor(1, 2, 0.5), 0.0), InputError);
}

TEST(UnlearningObjective, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const auto net = init_network({{3, 6, 4}, Activation::tanh}, seed);
    const Tensor x = testutil::random_tensor(5, 3, rng);
    const Tensor ref = testutil::random_probs(5, 4, rng);
    EXPECT_LT(testutil::gradient_check(net, x, unlearning_objective(ref, 0.5)), 1e-4) << "seed " << seed;
  }
}

TEST(UnlearningObjective, ZeroGradientAtReference) {
  // KL(ref || cur) is minimized at cur == ref, so the ascent starts from a flat point.
  const auto net = init_network({{2, 3}, Activation::relu}, 3);
  const Tensor x = Tensor::from_rows({{0.5, -1.0}, {2.0, 0.1}});
  const Tensor ref = softmax_rows(forward(net, x));
  const auto lg = loss_and_gradient(net, x, unlearning_objective(ref, 1.0));
  for (const auto& l : lg.grads) {
    for (double g : l.weight.values) EXPECT_NEAR(g, 0.0, 1e-12);
  }
}

TEST(UnlearnPlan, PartitionsTargets) {
  const IndexSet targets{1, 3, 4, 7, 9};
  const auto plan = make_unlearn_plan(NetworkTag::V, targets, 2, 0.05);
  ASSERT_EQ(plan.batches.size(), 3u);
  EXPECT_EQ(plan.batches[2].size(), 1u);
  IndexSet all;
  for (const auto& b : plan.batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, targets);
  Rng rng(4);
  auto shuffled = make_unlearn_plan(NetworkTag::A, targets, 5, 0.05, &rng);
  ASSERT_EQ(shuffled.batches.size(), 1u);
  std::sort(shuffled.batches[0].begin(), shuffled.batches[0].end());
  EXPECT_EQ(shuffled.batches[0], targets);
  EXPECT_THROW(make_unlearn_plan(NetworkTag::A, targets, 0, 0.05), ConfigError);
  EXPECT_THROW(make_unlearn_plan(NetworkTag::A, targets, 2, 0.0), ConfigError);
}

TEST(ApplyUnlearning, EmptyPlanIsNoOp) {
  auto net = init_network({{2, 4, 2}, Activation::relu}, 1);
  const auto before = net;
  auto opt = make_optimizer(net, 0.02, 0.9, 5e-4, 100);
  const auto stats = apply_unlearning(make_unlearn_plan(NetworkTag::A, {}, 4, 0.05), net, before, Tensor(3, 2), opt, 1);
  EXPECT_EQ(net, before);
  EXPECT_EQ(stats.num_targets, 0u);
}

TEST(ApplyUnlearning, KlNonDecreasingOverFiveEpochs) {
  // Toy net trained briefly, then snapshotted and forgotten on a fixed D_u.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto net = init_network({{3, 8, 3}, Activation::relu}, seed);
    auto opt = make_optimizer(net, 0.02, 0.9, 5e-4, 100);
    const Tensor x = testutil::random_tensor(40, 3, rng);
    Tensor y(40, 3);
    for (std::size_t i = 0; i < 40; ++i) y.at(i, i % 3) = 1.0;
    for (int s = 0; s < 20; ++s) sgd_step(net, loss_and_gradient(net, x, soft_cross_entropy_objective(y)).grads, opt, 1);
    const NetworkParams snapshot = net;
    const IndexSet targets{0, 3, 5, 8, 13, 21, 34};
    double prev = 0.0;
    for (int epoch = 0; epoch < 5; ++epoch) {
      const auto stats = apply_unlearning(make_unlearn_plan(NetworkTag::A, targets, 4, 0.05, &rng), net, snapshot, x,
                                          opt, 2);
      EXPECT_GE(stats.kl_after, prev) << "seed " << seed << " epoch " << epoch;
      prev = stats.kl_after;
    }
    EXPECT_GT(prev, 0.0);
  }
}

TEST(ForgettingLog, Format) {
  std::ostringstream os;
  write_forgetting_header(os);
  write_forgetting_row(os, 31, NetworkTag::V, {12, 0.25, 0.5});
  EXPECT_EQ(os.str(), "epoch,network,num_targets,mean_kl_before,mean_kl_after\n31,V,12,0.25,0.5\n");
}
