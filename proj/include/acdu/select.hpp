// SPDX-License-Identifier: Apache-2.0
#pragma once

// Loss-trajectory bookkeeping and unlearning-target selection: low-loss and
// loss-drop candidates, vetoed by agreement with the zero-shot oracle.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acdu/errors.hpp"
#include "acdu/netcore.hpp"
#include "acdu/oracle.hpp"

namespace acdu {

enum class NetworkTag { A = 0, V = 1 };

inline const char* to_string(NetworkTag t) { return t == NetworkTag::A ? "A" : "V"; }

/// Sorted, duplicate-free sample ids.
using IndexSet = std::vector<std::size_t>;

inline IndexSet set_union(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IndexSet set_difference(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline bool contains(const IndexSet& s, std::size_t id) { return std::binary_search(s.begin(), s.end(), id); }

/// Per-network, per-epoch loss arrays aligned with a fixed list of sample ids.
class TrajectoryStore {
 public:
  explicit TrajectoryStore(std::size_t num_samples = 0) : n_(num_samples) {}

  std::size_t num_samples() const { return n_; }

  void record(NetworkTag tag, int epoch, std::vector<double> losses) {
    if (losses.size() != n_) {
      throw InputError("record_losses: expected " + std::to_string(n_) + " losses, got " + std::to_string(losses.size()));
    }
    for (double v : losses) {
      if (!std::isfinite(v)) throw InputError("record_losses: non-finite loss");
    }
    auto& per_epoch = store_[index(tag)];
    if (per_epoch.count(epoch)) {
      throw StateError(std::string("record_losses: epoch ") + std::to_string(epoch) + " already recorded for net " +
                       to_string(tag));
    }
    per_epoch.emplace(epoch, std::move(losses));
  }

  bool has(NetworkTag tag, int epoch) const { return store_[index(tag)].count(epoch) != 0; }

  const std::vector<double>& at(NetworkTag tag, int epoch) const {
    const auto& per_epoch = store_[index(tag)];
    auto it = per_epoch.find(epoch);
    if (it == per_epoch.end()) {
      throw StateError(std::string("no losses recorded for net ") + to_string(tag) + " at epoch " + std::to_string(epoch));
    }
    return it->second;
  }

  std::vector<int> epochs(NetworkTag tag) const {
    std::vector<int> out;
    for (const auto& [e, _] : store_[index(tag)]) out.push_back(e);
    return out;
  }

 private:
  static std::size_t index(NetworkTag t) { return static_cast<std::size_t>(t); }

  std::size_t n_;
  std::array<std::map<int, std::vector<double>>, 2> store_;
};

/// Nearest-rank quantile: the ascending value at 0-indexed rank floor(alpha*N),
/// capped at N-1.
inline double quantile_threshold(std::span<const double> values, double alpha) {
  if (values.empty()) throw InputError("quantile_threshold: empty input");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("quantile_threshold: alpha must be in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  // The 1e-9 guard keeps products such as 0.29*100 from rounding down a rank.
  auto rank = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n) + 1e-9));
  return sorted[std::min(rank, n - 1)];
}

namespace detail {

inline IndexSet strictly_below(std::span<const double> values, double threshold, std::span<const std::size_t> ids) {
  IndexSet out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < threshold) out.push_back(ids[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace detail

/// {ids[i] : losses[i] < Q_{p_low}(losses)}. When `ids` is empty, positions are used.
inline IndexSet cond_low_loss(std::span<const double> losses, double p_low, std::span<const std::size_t> ids = {}) {
  const auto own = ids.empty() ? detail::iota_ids(losses.size()) : std::vector<std::size_t>(ids.begin(), ids.end());
  if (own.size() != losses.size()) throw InputError("cond_low_loss: id/loss length mismatch");
  if (losses.empty()) return {};
  return detail::strictly_below(losses, quantile_threshold(losses, p_low), own);
}

/// Samples whose loss change since the previous checkpoint falls strictly below
/// the p_drop quantile of all changes.
inline IndexSet cond_loss_drop(std::span<const double> losses_now, std::span<const double> losses_prev, double p_drop,
                               std::span<const std::size_t> ids = {}) {
  if (losses_now.size() != losses_prev.size()) throw InputError("cond_loss_drop: length mismatch");
  const auto own = ids.empty() ? detail::iota_ids(losses_now.size()) : std::vector<std::size_t>(ids.begin(), ids.end());
  if (own.size() != losses_now.size()) throw InputError("cond_loss_drop: id/loss length mismatch");
  if (losses_now.empty()) return {};
  std::vector<double> delta(losses_now.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = losses_now[i] - losses_prev[i];
  return detail::strictly_below(delta, quantile_threshold(delta, p_drop), own);
}

/// Samples whose observed label equals the oracle's argmax.
inline IndexSet cond_clip_consistent(const OracleTable& oracle, std::span<const std::size_t> ids,
                                     std::span<const std::size_t> observed_labels) {
  if (ids.size() != observed_labels.size()) throw InputError("cond_clip_consistent: id/label length mismatch");
  IndexSet out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (oracle.at(ids[i]).predicted == observed_labels[i]) out.push_back(ids[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Switches for the selection-condition ablations. A disabled candidate
/// condition contributes nothing; a disabled veto removes nothing.
struct ConditionToggles {
  bool low_loss = true;
  bool loss_drop = true;
  bool clip_filter = true;
};

struct UnlearningSelection {
  IndexSet low_loss;
  IndexSet loss_drop;
  IndexSet clip_consistent;
  IndexSet targets;  // (low_loss U loss_drop) \ clip_consistent
};

inline UnlearningSelection unlearning_ss(std::span<const double> losses_now, std::span<const double> losses_prev,
                                         const OracleTable& oracle, std::span<const std::size_t> ids,
                                         std::span<const std::size_t> observed_labels, double p_low, double p_drop,
                                         const ConditionToggles& toggles = {}) {
  UnlearningSelection s;
  if (toggles.low_loss) s.low_loss = cond_low_loss(losses_now, p_low, ids);
  if (toggles.loss_drop) s.loss_drop = cond_loss_drop(losses_now, losses_prev, p_drop, ids);
  if (toggles.clip_filter) s.clip_consistent = cond_clip_consistent(oracle, ids, observed_labels);
  s.targets = set_difference(set_union(s.low_loss, s.loss_drop), s.clip_consistent);
  return s;
}

struct SelectionSets {
  IndexSet du_a;
  IndexSet du_v;
  IndexSet dt;
  int epoch = 0;
  UnlearningSelection detail_a;
  UnlearningSelection detail_v;

  bool invariants_hold(std::span<const std::size_t> all_ids) const {
    IndexSet all(all_ids.begin(), all_ids.end());
    std::sort(all.begin(), all.end());
    return dt == set_difference(all, set_union(du_a, du_v)) && set_intersection(dt, du_a).empty() &&
           set_intersection(dt, du_v).empty();
  }
};

/// Parameters frozen at selection time; the forgetting loss pushes away from them.
struct ReferenceSnapshot {
  NetworkParams a;
  NetworkParams v;
  int epoch = 0;

  const NetworkParams& get(NetworkTag t) const { return t == NetworkTag::A ? a : v; }
};

/// Inputs for one selection round. Losses are read from `store` at
/// `epoch` (current) and `prev_epoch` (the E_UP-earlier checkpoint).
struct SelectionRequest {
  std::span<const std::size_t> train_ids;
  std::span<const std::size_t> observed_labels;
  int epoch = 0;
  int prev_epoch = 0;
  double p_low = 0.05;
  double p_drop = 0.2;
  ConditionToggles toggles;
};

inline std::pair<SelectionSets, ReferenceSnapshot> unlearning_setup(const SelectionRequest& req,
                                                                    const NetworkParams& net_a,
                                                                    const NetworkParams& net_v,
                                                                    const TrajectoryStore& store,
                                                                    const OracleTable& oracle) {
  SelectionSets sets;
  sets.epoch = req.epoch;
  for (NetworkTag tag : {NetworkTag::A, NetworkTag::V}) {
    const auto& now = store.at(tag, req.epoch);
    const auto& prev = store.at(tag, req.prev_epoch);
    auto sel = unlearning_ss(now, prev, oracle, req.train_ids, req.observed_labels, req.p_low, req.p_drop, req.toggles);
    if (tag == NetworkTag::A) {
      sets.du_a = sel.targets;
      sets.detail_a = std::move(sel);
    } else {
      sets.du_v = sel.targets;
      sets.detail_v = std::move(sel);
    }
  }
  IndexSet all(req.train_ids.begin(), req.train_ids.end());
  std::sort(all.begin(), all.end());
  sets.dt = set_difference(all, set_union(sets.du_a, sets.du_v));
  return {std::move(sets), ReferenceSnapshot{net_a, net_v, req.epoch}};
}

/// One row per train sample with its membership in every selection set.
inline void write_selection_audit(std::ostream& os, const SelectionSets& sets, std::span<const std::size_t> train_ids) {
  os << "sample_id,low_loss_A,loss_drop_A,low_loss_V,loss_drop_V,clip_consistent,unlearn_A,unlearn_V\n";
  for (std::size_t id : train_ids) {
    os << id << ',' << contains(sets.detail_a.low_loss, id) << ',' << contains(sets.detail_a.loss_drop, id) << ','
       << contains(sets.detail_v.low_loss, id) << ',' << contains(sets.detail_v.loss_drop, id) << ','
       << (contains(sets.detail_a.clip_consistent, id) || contains(sets.detail_v.clip_consistent, id)) << ','
       << contains(sets.du_a, id) << ',' << contains(sets.du_v, id) << '\n';
  }
}

}  // namespace acdu
