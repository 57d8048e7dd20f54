// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fixed zero-shot reference predictor. Two providers: a synthetic oracle with
// tunable accuracy/confidence, and a file-backed table for externally
// computed predictions. Also produces the frozen embeddings net V consumes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "acdu/datagen.hpp"
#include "acdu/errors.hpp"
#include "acdu/netcore.hpp"
#include "acdu/textio.hpp"

namespace acdu {

struct OraclePrediction {
  std::size_t id = 0;
  std::vector<double> probs;
  std::size_t predicted = 0;

  friend bool operator==(const OraclePrediction&, const OraclePrediction&) = default;
};

/// Oracle predictions indexed by sample id. Read-only once built.
class OracleTable {
 public:
  OracleTable() = default;
  OracleTable(std::size_t num_classes, std::vector<OraclePrediction> rows)
      : num_classes_(num_classes), rows_(std::move(rows)) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (rows_[i].id != i) throw InputError("OracleTable: rows must be ordered by contiguous id");
      if (rows_[i].probs.size() != num_classes_) throw InputError("OracleTable: probability width mismatch");
    }
  }

  std::size_t num_classes() const { return num_classes_; }
  std::size_t size() const { return rows_.size(); }
  bool covers(std::size_t id) const { return id < rows_.size(); }

  const OraclePrediction& at(std::size_t id) const {
    if (!covers(id)) throw IngestionError("oracle has no prediction for sample " + std::to_string(id));
    return rows_[id];
  }

  const std::vector<OraclePrediction>& rows() const { return rows_; }

  friend bool operator==(const OracleTable&, const OracleTable&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::vector<OraclePrediction> rows_;
};

/// With probability `accuracy` the predicted class is the true label, otherwise
/// a uniformly drawn wrong class. The predicted class gets `confidence`, the
/// other classes share the remainder equally.
inline OracleTable synthetic_oracle(const Dataset& ds, double accuracy, double confidence, std::uint64_t seed) {
  const std::size_t C = ds.num_classes;
  const double chance = 1.0 / static_cast<double>(C);
  if (!(accuracy >= chance - 1e-12 && accuracy <= 1.0)) {
    throw InputError("synthetic_oracle: accuracy must be in [1/C, 1]");
  }
  if (!(confidence > chance && confidence < 1.0)) {
    throw InputError("synthetic_oracle: confidence must be in (1/C, 1)");
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> wrong(0, C - 2);
  const double rest = (1.0 - confidence) / static_cast<double>(C - 1);
  std::vector<OraclePrediction> rows;
  rows.reserve(ds.size());
  for (const auto& s : ds.samples) {
    std::size_t predicted = s.true_label;
    if (unif(rng) >= accuracy) {
      predicted = wrong(rng);
      if (predicted >= s.true_label) ++predicted;
    }
    OraclePrediction p{s.id, std::vector<double>(C, rest), predicted};
    p.probs[predicted] = confidence;
    rows.push_back(std::move(p));
  }
  return OracleTable(C, std::move(rows));
}

/// Frozen embedding surrogate: the first d_e - C coordinates are a seeded random
/// linear map of the features, the last C coordinates are the oracle's
/// probability vector scaled by `class_gain`.
inline Tensor oracle_embeddings(const Dataset& ds, const OracleTable& oracle, std::size_t d_e, std::uint64_t seed,
                                double class_gain = 3.0) {
  const std::size_t C = ds.num_classes;
  if (d_e < C) throw InputError("oracle_embeddings: embedding width must be >= number of classes");
  if (oracle.num_classes() != C) throw InputError("oracle_embeddings: oracle class count mismatch");
  const std::size_t proj = d_e - C;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(ds.dim)));
  std::vector<double> map(proj * ds.dim);
  for (auto& v : map) v = normal(rng);
  Tensor out(ds.size(), d_e);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& f = ds.samples[i].features;
    auto row = out.row(i);
    for (std::size_t k = 0; k < proj; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < ds.dim; ++d) s += map[k * ds.dim + d] * f[d];
      row[k] = s;
    }
    const auto& p = oracle.at(ds.samples[i].id).probs;
    for (std::size_t c = 0; c < C; ++c) row[proj + c] = class_gain * p[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle file: header line with C, then "id,p_0,...,p_{C-1}" per sample.

inline void save_oracle(std::ostream& os, const OracleTable& table) {
  os << table.num_classes() << '\n';
  for (const auto& r : table.rows()) {
    os << r.id;
    for (double p : r.probs) os << ',' << textio::format_double(p);
    os << '\n';
  }
}

inline void save_oracle(const std::string& path, const OracleTable& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open '" + path + "' for writing");
  save_oracle(os, table);
}

/// Parses and validates an oracle file covering ids 0..expected_ids-1.
/// Rows must be stochastic within `tolerance`.
inline OracleTable load_oracle(std::istream& is, std::size_t expected_ids, double tolerance = 1e-6) {
  std::string line;
  std::size_t line_no = 1;
  auto fail = [&](const std::string& msg) {
    throw IngestionError("oracle line " + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(is, line)) throw IngestionError("oracle: empty file");
  const auto C = textio::parse_int(line);
  if (!C || *C < 2) fail("header must be the class count (>= 2)");
  const auto num_classes = static_cast<std::size_t>(*C);

  std::vector<OraclePrediction> by_id(expected_ids);
  std::vector<bool> seen(expected_ids, false);
  while (std::getline(is, line)) {
    ++line_no;
    if (textio::trim(line).empty()) continue;
    const auto fields = textio::split(textio::trim(line), ',');
    if (fields.size() != num_classes + 1) fail("expected id followed by " + std::to_string(num_classes) + " probabilities");
    const auto id = textio::parse_int(fields[0]);
    if (!id || *id < 0) fail("bad sample id");
    const auto uid = static_cast<std::size_t>(*id);
    if (uid >= expected_ids) fail("sample id " + std::to_string(uid) + " outside dataset");
    if (seen[uid]) fail("duplicate sample id " + std::to_string(uid));
    OraclePrediction p{uid, std::vector<double>(num_classes), 0};
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const auto v = textio::parse_double(fields[c + 1]);
      if (!v || !std::isfinite(*v) || *v < 0.0) fail("bad probability '" + std::string(fields[c + 1]) + "'");
      p.probs[c] = *v;
      sum += *v;
    }
    if (std::abs(sum - 1.0) > tolerance) fail("probabilities sum to " + textio::format_double(sum) + ", not 1");
    p.predicted = argmax(p.probs);
    by_id[uid] = std::move(p);
    seen[uid] = true;
  }
  std::string missing;
  std::size_t n_missing = 0;
  for (std::size_t i = 0; i < expected_ids; ++i) {
    if (seen[i]) continue;
    if (n_missing++ < 20) missing += (missing.empty() ? "" : ",") + std::to_string(i);
  }
  if (n_missing > 0) {
    throw IngestionError("oracle: missing sample ids {" + missing + (n_missing > 20 ? ",..." : "") + "}");
  }
  return OracleTable(num_classes, std::move(by_id));
}

inline OracleTable load_oracle_file(const std::string& path, std::size_t expected_ids, double tolerance = 1e-6) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open oracle file '" + path + "'");
  return load_oracle(is, expected_ids, tolerance);
}

}  // namespace acdu
