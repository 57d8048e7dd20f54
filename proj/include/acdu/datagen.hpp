// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale Gaussian-blob datasets and label-noise injection through
// explicit class-transition matrices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "acdu/errors.hpp"
#include "acdu/netcore.hpp"
#include "acdu/textio.hpp"

namespace acdu {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Sample {
  std::size_t id = 0;
  Split split = Split::train;
  std::size_t true_label = 0;
  std::size_t observed_label = 0;
  std::vector<double> features;

  bool noisy() const { return true_label != observed_label; }
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Samples are stored in id order: all train samples first, then test.
struct Dataset {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<Sample> samples;
  std::vector<std::vector<double>> centroids;  // empty when loaded from file

  std::size_t size() const { return samples.size(); }

  std::vector<std::size_t> ids(Split split) const {
    std::vector<std::size_t> out;
    for (const auto& s : samples) {
      if (s.split == split) out.push_back(s.id);
    }
    return out;
  }

  Tensor features(std::span<const std::size_t> ids) const {
    Tensor t(ids.size(), dim);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto& f = samples[ids[r]].features;
      std::copy(f.begin(), f.end(), t.row(r).begin());
    }
    return t;
  }

  std::vector<std::size_t> observed_labels(std::span<const std::size_t> ids) const {
    std::vector<std::size_t> out(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) out[r] = samples[ids[r]].observed_label;
    return out;
  }

  std::vector<std::size_t> true_labels(std::span<const std::size_t> ids) const {
    std::vector<std::size_t> out(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) out[r] = samples[ids[r]].true_label;
    return out;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.num_classes == b.num_classes && a.dim == b.dim && a.samples == b.samples;
  }
};

/// C x C row-stochastic matrix, T[i][j] = P(observed = j | true = i).
struct TransitionMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t num_classes() const { return rows.size(); }
  double operator()(std::size_t i, std::size_t j) const { return rows[i][j]; }

  bool is_row_stochastic(double tol = 1e-9) const {
    for (const auto& r : rows) {
      double s = 0.0;
      for (double v : r) {
        if (v < 0.0) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }
};

inline TransitionMatrix identity_matrix(std::size_t C) {
  TransitionMatrix t{std::vector<std::vector<double>>(C, std::vector<double>(C, 0.0))};
  for (std::size_t i = 0; i < C; ++i) t.rows[i][i] = 1.0;
  return t;
}

/// Diagonal 1-eta, off-diagonal eta/(C-1).
inline TransitionMatrix symmetric_matrix(std::size_t C, double eta) {
  if (C < 2) throw InputError("symmetric_matrix: need at least 2 classes");
  if (!(eta >= 0.0 && eta < 1.0)) throw InputError("symmetric_matrix: eta must be in [0, 1)");
  const double off = eta / static_cast<double>(C - 1);
  TransitionMatrix t{std::vector<std::vector<double>>(C, std::vector<double>(C, off))};
  for (std::size_t i = 0; i < C; ++i) t.rows[i][i] = 1.0 - eta;
  return t;
}

/// Class i keeps its label with 1-eta and flips to pair_map[i] with eta.
inline TransitionMatrix asymmetric_matrix(std::size_t C, double eta, std::span<const std::size_t> pair_map) {
  if (C < 2) throw InputError("asymmetric_matrix: need at least 2 classes");
  if (!(eta >= 0.0 && eta < 1.0)) throw InputError("asymmetric_matrix: eta must be in [0, 1)");
  if (pair_map.size() != C) throw InputError("asymmetric_matrix: pair map must cover every class");
  TransitionMatrix t{std::vector<std::vector<double>>(C, std::vector<double>(C, 0.0))};
  for (std::size_t i = 0; i < C; ++i) {
    if (pair_map[i] >= C) throw InputError("asymmetric_matrix: pair target out of range for class " + std::to_string(i));
    if (pair_map[i] == i) throw InputError("asymmetric_matrix: class " + std::to_string(i) + " maps to itself");
    t.rows[i][i] = 1.0 - eta;
    t.rows[i][pair_map[i]] += eta;
  }
  return t;
}

/// Default confusable-class map: i -> (i+1) mod C.
inline std::vector<std::size_t> cyclic_pair_map(std::size_t C) {
  std::vector<std::size_t> m(C);
  for (std::size_t i = 0; i < C; ++i) m[i] = (i + 1) % C;
  return m;
}

/// Gaussian clusters with isotropic standard deviation `spread` around C seeded
/// centroids drawn from N(0, I). Train samples first (class-major), then test.
inline Dataset make_blobs(std::size_t C, std::size_t n_per_class, std::size_t dim, double spread, std::uint64_t seed,
                          std::size_t n_test_per_class = 0) {
  if (C < 2) throw InputError("make_blobs: need at least 2 classes");
  if (n_per_class < 1) throw InputError("make_blobs: n_per_class must be >= 1");
  if (dim < 1) throw InputError("make_blobs: dim must be >= 1");
  if (!(spread > 0.0)) throw InputError("make_blobs: spread must be positive");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.num_classes = C;
  ds.dim = dim;
  ds.centroids.assign(C, std::vector<double>(dim));
  for (auto& c : ds.centroids) {
    for (auto& v : c) v = normal(rng);
  }
  auto emit = [&](Split split, std::size_t per_class) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < per_class; ++k) {
        Sample s;
        s.id = ds.samples.size();
        s.split = split;
        s.true_label = c;
        s.observed_label = c;
        s.features.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) s.features[d] = ds.centroids[c][d] + spread * normal(rng);
        ds.samples.push_back(std::move(s));
      }
    }
  };
  emit(Split::train, n_per_class);
  emit(Split::test, n_test_per_class);
  return ds;
}

/// Redraw every train sample's observed label from row T[true label].
inline Dataset inject_noise(Dataset ds, const TransitionMatrix& T, std::uint64_t seed) {
  if (T.num_classes() != ds.num_classes) {
    throw InputError("inject_noise: transition matrix has " + std::to_string(T.num_classes()) +
                     " classes, dataset has " + std::to_string(ds.num_classes));
  }
  if (!T.is_row_stochastic(1e-9)) throw InputError("inject_noise: transition matrix is not row-stochastic");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& s : ds.samples) {
    if (s.split != Split::train) continue;
    const auto& row = T.rows[s.true_label];
    const double u = unif(rng);
    double acc = 0.0;
    std::size_t j = 0;
    for (; j + 1 < row.size(); ++j) {
      acc += row[j];
      if (u < acc) break;
    }
    // Skip trailing zero-probability classes the loop may land on through rounding.
    while (row[j] == 0.0 && j > 0) --j;
    s.observed_label = j;
  }
  return ds;
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline std::vector<std::vector<double>> class_means(const Dataset& ds) {
  std::vector<std::vector<double>> means(ds.num_classes, std::vector<double>(ds.dim, 0.0));
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (const auto& s : ds.samples) {
    if (s.split != Split::train) continue;
    ++counts[s.true_label];
    for (std::size_t d = 0; d < ds.dim; ++d) means[s.true_label][d] += s.features[d];
  }
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (counts[c] == 0) continue;
    for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
  }
  return means;
}

}  // namespace detail

/// Synthetic instance-dependent noise. Each train sample gets a boundary score
/// d_own / d_nearest_other from centroid distances; its flip probability is
/// min(1, k * score) with k chosen so the mean flip probability equals eta.
/// A flip always targets the geometrically nearest other class.
inline Dataset instance_noise(Dataset ds, double eta, std::uint64_t seed) {
  if (ds.num_classes < 2) throw InputError("instance_noise: need at least 2 classes");
  if (!(eta >= 0.0 && eta < 1.0)) throw InputError("instance_noise: eta must be in [0, 1)");
  const auto centroids = ds.centroids.empty() ? detail::class_means(ds) : ds.centroids;

  std::vector<std::size_t> train;
  std::vector<double> score;
  std::vector<std::size_t> target;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.split != Split::train) continue;
    const double own = std::sqrt(detail::squared_distance(s.features, centroids[s.true_label]));
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = s.true_label;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      if (c == s.true_label) continue;
      const double d = std::sqrt(detail::squared_distance(s.features, centroids[c]));
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    train.push_back(i);
    score.push_back(own / std::max(best, 1e-12));
    target.push_back(best_c);
  }
  if (train.empty() || eta == 0.0) return ds;

  auto mean_prob = [&](double k) {
    double s = 0.0;
    for (double v : score) s += std::min(1.0, k * v);
    return s / static_cast<double>(score.size());
  };
  double lo = 0.0, hi = 1.0;
  while (mean_prob(hi) < eta && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_prob(mid) < eta ? lo : hi) = mid;
  }
  const double k = hi;

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t n = 0; n < train.size(); ++n) {
    auto& s = ds.samples[train[n]];
    s.observed_label = unif(rng) < std::min(1.0, k * score[n]) ? target[n] : s.true_label;
  }
  return ds;
}

struct EmpiricalTransition {
  TransitionMatrix matrix;
  std::vector<bool> empty_rows;  // rows with no samples, reported as uniform
};

inline EmpiricalTransition empirical_transition(std::span<const std::size_t> true_labels,
                                                std::span<const std::size_t> observed, std::size_t C) {
  if (true_labels.size() != observed.size()) throw InputError("empirical_transition: length mismatch");
  std::vector<std::vector<double>> counts(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    if (true_labels[i] >= C || observed[i] >= C) throw InputError("empirical_transition: label out of range");
    counts[true_labels[i]][observed[i]] += 1.0;
  }
  EmpiricalTransition out{{std::move(counts)}, std::vector<bool>(C, false)};
  for (std::size_t i = 0; i < C; ++i) {
    auto& row = out.matrix.rows[i];
    double total = 0.0;
    for (double v : row) total += v;
    if (total == 0.0) {
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(C));
      out.empty_rows[i] = true;
    } else {
      for (auto& v : row) v /= total;
    }
  }
  return out;
}

inline EmpiricalTransition empirical_transition(const Dataset& ds) {
  const auto ids = ds.ids(Split::train);
  return empirical_transition(ds.true_labels(ids), ds.observed_labels(ids), ds.num_classes);
}

// ---------------------------------------------------------------------------
// Dataset file: "C,dim,N" header, then id,split,true,observed,features...

inline void save_dataset(std::ostream& os, const Dataset& ds) {
  os << ds.num_classes << ',' << ds.dim << ',' << ds.samples.size() << '\n';
  for (const auto& s : ds.samples) {
    os << s.id << ',' << to_string(s.split) << ',' << s.true_label << ',' << s.observed_label;
    for (double v : s.features) os << ',' << textio::format_double(v);
    os << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open '" + path + "' for writing");
  save_dataset(os, ds);
}

inline Dataset load_dataset(std::istream& is) {
  std::string line;
  std::size_t line_no = 1;
  auto fail = [&](const std::string& msg) {
    throw IngestionError("dataset line " + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(is, line)) throw IngestionError("dataset: empty file");
  const auto header = textio::split(textio::trim(line), ',');
  if (header.size() != 3) fail("header must be C,dim,N");
  const auto C = textio::parse_int(header[0]);
  const auto dim = textio::parse_int(header[1]);
  const auto N = textio::parse_int(header[2]);
  if (!C || !dim || !N || *C < 2 || *dim < 1 || *N < 0) fail("invalid header values");
  Dataset ds;
  ds.num_classes = static_cast<std::size_t>(*C);
  ds.dim = static_cast<std::size_t>(*dim);
  ds.samples.reserve(static_cast<std::size_t>(*N));
  while (std::getline(is, line)) {
    ++line_no;
    if (textio::trim(line).empty()) continue;
    const auto fields = textio::split(textio::trim(line), ',');
    if (fields.size() != 4 + ds.dim) fail("expected " + std::to_string(4 + ds.dim) + " fields");
    Sample s;
    const auto id = textio::parse_int(fields[0]);
    if (!id || *id != static_cast<std::int64_t>(ds.samples.size())) fail("ids must be contiguous from 0");
    s.id = static_cast<std::size_t>(*id);
    const auto split = textio::trim(fields[1]);
    if (split == "train") s.split = Split::train;
    else if (split == "test") s.split = Split::test;
    else fail("unknown split '" + std::string(split) + "'");
    const auto t = textio::parse_int(fields[2]);
    const auto o = textio::parse_int(fields[3]);
    if (!t || !o || *t < 0 || *o < 0 || *t >= *C || *o >= *C) fail("label out of range");
    s.true_label = static_cast<std::size_t>(*t);
    s.observed_label = static_cast<std::size_t>(*o);
    if (s.split == Split::test && s.true_label != s.observed_label) fail("test samples must not carry noise");
    s.features.resize(ds.dim);
    for (std::size_t d = 0; d < ds.dim; ++d) {
      const auto v = textio::parse_double(fields[4 + d]);
      if (!v || !std::isfinite(*v)) fail("bad feature value");
      s.features[d] = *v;
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != static_cast<std::size_t>(*N)) {
    throw IngestionError("dataset: header announces " + std::to_string(*N) + " samples, found " +
                         std::to_string(ds.samples.size()));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open dataset file '" + path + "'");
  return load_dataset(is);
}

}  // namespace acdu
