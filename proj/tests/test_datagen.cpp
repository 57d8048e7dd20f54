// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "acdu/datagen.hpp"

using namespace acdu;

namespace {

double max_deviation(const TransitionMatrix& a, const TransitionMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    for (std::size_t j = 0; j < a.rows.size(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  }
  return m;
}

}  // namespace

TEST(Blobs, DeterministicPerSeed) {
  EXPECT_EQ(make_blobs(2, 1, 2, 1.0, 42), make_blobs(2, 1, 2, 1.0, 42));
  EXPECT_NE(make_blobs(2, 1, 2, 1.0, 42), make_blobs(2, 1, 2, 1.0, 43));
}

TEST(Blobs, BalancedCountsAndClean) {
  const auto ds = make_blobs(3, 100, 4, 1.0, 1, 10);
  EXPECT_EQ(ds.ids(Split::train).size(), 300u);
  EXPECT_EQ(ds.ids(Split::test).size(), 30u);
  std::vector<int> counts(3, 0);
  for (const auto& s : ds.samples) {
    EXPECT_FALSE(s.noisy());
    if (s.split == Split::train) ++counts[s.true_label];
  }
  EXPECT_EQ(counts, (std::vector<int>{100, 100, 100}));
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.samples[i].id, i);
}

TEST(Blobs, VarianceShrinksWithSpread) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double prev = std::numeric_limits<double>::infinity();
    for (double spread : {1.0, 0.1, 1e-3}) {
      const auto ds = make_blobs(2, 200, 3, spread, seed);
      double var = 0.0;
      for (const auto& s : ds.samples) {
        for (std::size_t d = 0; d < ds.dim; ++d) {
          const double diff = s.features[d] - ds.centroids[s.true_label][d];
          var += diff * diff;
        }
      }
      var /= static_cast<double>(ds.size() * ds.dim);
      EXPECT_LT(var, prev);
      EXPECT_NEAR(var, spread * spread, 0.2 * spread * spread);
      prev = var;
    }
  }
}

TEST(Blobs, RejectsInvalidSizes) {
  EXPECT_THROW(make_blobs(1, 10, 2, 1.0, 1), InputError);
  EXPECT_THROW(make_blobs(2, 0, 2, 1.0, 1), InputError);
  EXPECT_THROW(make_blobs(2, 10, 0, 1.0, 1), InputError);
  EXPECT_THROW(make_blobs(2, 10, 2, 0.0, 1), InputError);
}

TEST(SymmetricMatrix, Examples) {
  const auto id = symmetric_matrix(10, 0.0);
  EXPECT_EQ(max_deviation(id, identity_matrix(10)), 0.0);
  const auto half = symmetric_matrix(10, 0.5);
  EXPECT_NEAR(half(3, 3), 0.5, 1e-12);
  EXPECT_NEAR(half(3, 4), 0.5 / 9.0, 1e-12);
  EXPECT_NEAR(half(3, 4), 0.0556, 1e-4);
  const auto two = symmetric_matrix(2, 0.9);
  EXPECT_NEAR(two(0, 0), 0.1, 1e-12);
  EXPECT_NEAR(two(0, 1), 0.9, 1e-12);
  EXPECT_NEAR(two(1, 0), 0.9, 1e-12);
  EXPECT_TRUE(half.is_row_stochastic(1e-9));
  EXPECT_THROW(symmetric_matrix(10, 1.0), InputError);
  EXPECT_THROW(symmetric_matrix(10, -0.1), InputError);
}

TEST(AsymmetricMatrix, Examples) {
  const std::vector<std::size_t> swap{1, 0};
  EXPECT_EQ(max_deviation(asymmetric_matrix(2, 0.0, swap), identity_matrix(2)), 0.0);
  const auto m = asymmetric_matrix(2, 0.4, swap);
  EXPECT_NEAR(m(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(m(0, 1), 0.4, 1e-12);
  EXPECT_NEAR(m(1, 0), 0.4, 1e-12);
  const auto big = asymmetric_matrix(6, 0.3, cyclic_pair_map(6));
  EXPECT_TRUE(big.is_row_stochastic(1e-9));
  EXPECT_THROW(asymmetric_matrix(2, 0.4, std::vector<std::size_t>{0, 0}), InputError);
}

TEST(InjectNoise, IdentityKeepsLabels) {
  const auto ds = inject_noise(make_blobs(4, 50, 2, 1.0, 3), identity_matrix(4), 9);
  for (const auto& s : ds.samples) EXPECT_FALSE(s.noisy());
}

TEST(InjectNoise, SymmetricStatistics) {
  const auto clean = make_blobs(10, 1000, 2, 1.0, 5, 20);
  const auto T = symmetric_matrix(10, 0.5);
  const auto noisy = inject_noise(clean, T, 6);
  std::size_t flips = 0;
  for (const auto& s : noisy.samples) {
    if (s.split == Split::test) {
      EXPECT_FALSE(s.noisy());
    }
    flips += s.noisy();
  }
  EXPECT_NEAR(static_cast<double>(flips) / 10000.0, 0.5, 0.02);
}

TEST(InjectNoise, PerEntryWithinTwoPointsAtLargeRows) {
  // 10000 draws per row puts the diagonal's binomial sd at 0.005.
  const auto T = symmetric_matrix(10, 0.5);
  const auto noisy = inject_noise(make_blobs(10, 10000, 1, 1.0, 5), T, 6);
  EXPECT_LE(max_deviation(empirical_transition(noisy).matrix, T), 0.02);
}

TEST(InjectNoise, PreservesFeaturesAndTruth) {
  const auto clean = make_blobs(3, 40, 3, 1.0, 5, 5);
  const auto noisy = inject_noise(clean, symmetric_matrix(3, 0.4), 8);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    EXPECT_EQ(clean.samples[i].features, noisy.samples[i].features);
    EXPECT_EQ(clean.samples[i].true_label, noisy.samples[i].true_label);
  }
  EXPECT_EQ(noisy, inject_noise(clean, symmetric_matrix(3, 0.4), 8));
}

TEST(InjectNoise, AsymmetricOnlyDesignatedPairs) {
  const auto map = cyclic_pair_map(5);
  const auto noisy = inject_noise(make_blobs(5, 500, 2, 1.0, 2), asymmetric_matrix(5, 0.45, map), 3);
  for (const auto& s : noisy.samples) {
    EXPECT_TRUE(s.observed_label == s.true_label || s.observed_label == map[s.true_label]);
  }
}

TEST(InjectNoise, ConvergesAcrossSeeds) {
  const std::size_t C = 4, n = 400;
  const auto T = symmetric_matrix(C, 0.3);
  const double bound = 3.0 / std::sqrt(static_cast<double>(n * C));
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto noisy = inject_noise(make_blobs(C, n, 2, 1.0, seed), T, seed + 100);
    EXPECT_LE(max_deviation(empirical_transition(noisy).matrix, T), bound);
  }
}

TEST(InjectNoise, ClassCountMismatch) {
  EXPECT_THROW(inject_noise(make_blobs(3, 5, 2, 1.0, 1), identity_matrix(4), 1), InputError);
}

TEST(InstanceNoise, ZeroEtaNoFlips) {
  const auto ds = instance_noise(make_blobs(3, 100, 2, 1.0, 1), 0.0, 2);
  for (const auto& s : ds.samples) EXPECT_FALSE(s.noisy());
}

TEST(InstanceNoise, RateAndTargets) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto clean = make_blobs(4, 500, 3, 1.0, seed);
    const auto noisy = instance_noise(clean, 0.3, seed);
    std::size_t flips = 0;
    for (const auto& s : noisy.samples) {
      if (!s.noisy()) continue;
      ++flips;
      std::size_t nearest = s.true_label;
      double best = 1e300;
      for (std::size_t c = 0; c < 4; ++c) {
        if (c == s.true_label) continue;
        double d = 0;
        for (std::size_t k = 0; k < 3; ++k) d += std::pow(s.features[k] - clean.centroids[c][k], 2);
        if (d < best) best = d, nearest = c;
      }
      EXPECT_EQ(s.observed_label, nearest);
    }
    EXPECT_NEAR(static_cast<double>(flips) / 2000.0, 0.3, 0.05);
  }
}

TEST(InstanceNoise, BoundarySamplesFlipMoreOften) {
  // Split samples by the own/nearest-other distance ratio and compare flip rates.
  std::size_t inner_flips = 0, outer_flips = 0, inner = 0, outer = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto clean = make_blobs(3, 300, 2, 1.0, seed);
    const auto noisy = instance_noise(clean, 0.3, seed + 7);
    std::vector<double> ratio;
    for (const auto& s : clean.samples) {
      double own = 0, other = 1e300;
      for (std::size_t c = 0; c < 3; ++c) {
        double d = 0;
        for (std::size_t k = 0; k < 2; ++k) d += std::pow(s.features[k] - clean.centroids[c][k], 2);
        if (c == s.true_label) own = std::sqrt(d);
        else other = std::min(other, std::sqrt(d));
      }
      ratio.push_back(own / other);
    }
    auto sorted = ratio;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    for (std::size_t i = 0; i < ratio.size(); ++i) {
      const bool flipped = noisy.samples[i].noisy();
      if (ratio[i] < median) inner++, inner_flips += flipped;
      else outer++, outer_flips += flipped;
    }
  }
  EXPECT_LT(static_cast<double>(inner_flips) / inner, static_cast<double>(outer_flips) / outer);
}

TEST(EmpiricalTransition, HandBuiltCase) {
  const std::vector<std::size_t> t{0, 0, 1, 1};
  const std::vector<std::size_t> o{0, 1, 1, 1};
  const auto e = empirical_transition(t, o, 3);
  EXPECT_DOUBLE_EQ(e.matrix(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(e.matrix(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(e.matrix(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(e.matrix(2, 0), 1.0 / 3.0);
  EXPECT_TRUE(e.empty_rows[2]);
  EXPECT_FALSE(e.empty_rows[0]);
  const auto id = empirical_transition(t, t, 2);
  EXPECT_EQ(max_deviation(id.matrix, identity_matrix(2)), 0.0);
}

TEST(DatasetFile, RoundTrip) {
  const auto ds = inject_noise(make_blobs(3, 20, 4, 0.7, 11, 5), symmetric_matrix(3, 0.4), 12);
  std::stringstream ss;
  save_dataset(ss, ds);
  EXPECT_EQ(load_dataset(ss), ds);
}

TEST(DatasetFile, RejectsMalformed) {
  auto expect_line = [](const std::string& text, const std::string& fragment) {
    std::stringstream ss(text);
    try {
      load_dataset(ss);
      FAIL() << "accepted: " << text;
    } catch (const IngestionError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_line("2,1,1\n1,train,0,0,0.5\n", "line 2");
  expect_line("2,1,1\n0,train,0,5,0.5\n", "label out of range");
  expect_line("2,1,1\n0,test,0,1,0.5\n", "must not carry noise");
  expect_line("2,1,2\n0,train,0,0,0.5\n", "announces 2");
  expect_line("2,1,1\n0,train,0,0,abc\n", "bad feature");
}
