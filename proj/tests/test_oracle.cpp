// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "acdu/coteach.hpp"
#include "acdu/oracle.hpp"

using namespace acdu;

namespace {

double oracle_accuracy(const Dataset& ds, const OracleTable& t) {
  std::size_t hit = 0;
  for (const auto& s : ds.samples) hit += t.at(s.id).predicted == s.true_label;
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

/// Softmax regression trained with full-batch SGD; returns test accuracy.
double linear_probe(const Tensor& features, const Dataset& ds, std::uint64_t seed) {
  const auto train = ds.ids(Split::train);
  const auto test = ds.ids(Split::test);
  auto net = init_network({{features.cols(), ds.num_classes}, Activation::relu}, seed);
  auto opt = make_optimizer(net, 0.1, 0.9, 0.0, 1000);
  Tensor targets(train.size(), ds.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) targets.at(i, ds.samples[train[i]].true_label) = 1.0;
  const Tensor x = gather_rows(features, train);
  for (int step = 0; step < 200; ++step) {
    const auto lg = loss_and_gradient(net, x, soft_cross_entropy_objective(targets));
    sgd_step(net, lg.grads, opt, 1);
  }
  return accuracy(net, gather_rows(features, test), ds.true_labels(test));
}

}  // namespace

TEST(SyntheticOracle, PerfectAccuracy) {
  const auto ds = make_blobs(4, 50, 2, 1.0, 1);
  const auto t = synthetic_oracle(ds, 1.0, 0.9, 3);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(t.at(s.id).predicted, s.true_label);
    EXPECT_NEAR(t.at(s.id).probs[s.true_label], 0.9, 1e-15);
  }
}

TEST(SyntheticOracle, ChanceAccuracy) {
  const auto ds = make_blobs(5, 2000, 1, 1.0, 1);
  EXPECT_NEAR(oracle_accuracy(ds, synthetic_oracle(ds, 0.2, 0.5, 4)), 0.2, 0.02);
}

TEST(SyntheticOracle, AccuracyWithinTwoPoints) {
  const auto ds = make_blobs(10, 1000, 1, 1.0, 2);
  for (double a : {0.5, 0.7, 0.9}) EXPECT_NEAR(oracle_accuracy(ds, synthetic_oracle(ds, a, 0.6, 5)), a, 0.02);
}

TEST(SyntheticOracle, RowsAreStochasticAndConsistent) {
  const auto ds = make_blobs(3, 100, 2, 1.0, 1);
  const auto t = synthetic_oracle(ds, 0.7, 0.6, 6);
  for (const auto& r : t.rows()) {
    EXPECT_NEAR(std::accumulate(r.probs.begin(), r.probs.end(), 0.0), 1.0, 1e-12);
    EXPECT_EQ(argmax(r.probs), r.predicted);
  }
  EXPECT_EQ(t, synthetic_oracle(ds, 0.7, 0.6, 6));
}

TEST(SyntheticOracle, RejectsOutOfRange) {
  const auto ds = make_blobs(4, 5, 2, 1.0, 1);
  EXPECT_THROW(synthetic_oracle(ds, 0.2, 0.6, 1), InputError);
  EXPECT_THROW(synthetic_oracle(ds, 1.1, 0.6, 1), InputError);
  EXPECT_THROW(synthetic_oracle(ds, 0.7, 0.25, 1), InputError);
  EXPECT_THROW(synthetic_oracle(ds, 0.7, 1.0, 1), InputError);
}

TEST(Embeddings, DeterministicAndWidth) {
  const auto ds = make_blobs(3, 20, 5, 1.0, 1);
  const auto t = synthetic_oracle(ds, 0.8, 0.6, 2);
  const auto a = oracle_embeddings(ds, t, 12, 7);
  EXPECT_EQ(a, oracle_embeddings(ds, t, 12, 7));
  EXPECT_EQ(a.cols(), 12u);
  EXPECT_EQ(a.rows(), ds.size());
  EXPECT_TRUE(a.all_finite());
  EXPECT_EQ(oracle_embeddings(ds, t, 3, 7).cols(), 3u);
  EXPECT_THROW(oracle_embeddings(ds, t, 2, 7), InputError);
}

TEST(Embeddings, ProbeBeatsRawFeaturesWhenOracleIsGood) {
  const auto ds = make_blobs(4, 150, 4, 2.0, 8, 150);
  const auto t = synthetic_oracle(ds, 0.95, 0.7, 9);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const double raw = linear_probe(ds.features(all), ds, 1);
  const double emb = linear_probe(oracle_embeddings(ds, t, 16, 10), ds, 1);
  EXPECT_GT(emb, raw);
}

TEST(OracleFile, RoundTrip) {
  const auto ds = make_blobs(3, 10, 2, 1.0, 1);
  const auto t = synthetic_oracle(ds, 0.7, 0.6, 2);
  std::stringstream ss;
  save_oracle(ss, t);
  EXPECT_EQ(load_oracle(ss, ds.size()), t);
}

TEST(OracleFile, RejectsNonStochasticRowWithLine) {
  std::stringstream ss("2\n0,0.5,0.5\n1,0.4,0.4\n");
  try {
    load_oracle(ss, 2);
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(OracleFile, ReportsMissingIds) {
  std::stringstream ss;
  ss << "2\n";
  for (int i = 0; i < 10; ++i) {
    if (i != 7) ss << i << ",0.5,0.5\n";
  }
  try {
    load_oracle(ss, 10);
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("{7}"), std::string::npos) << e.what();
  }
}

TEST(OracleTable, MissingIdIsIngestionError) {
  const auto ds = make_blobs(2, 2, 1, 1.0, 1);
  const auto t = synthetic_oracle(ds, 0.7, 0.6, 1);
  EXPECT_THROW(t.at(99), IngestionError);
}
