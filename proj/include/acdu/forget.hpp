// SPDX-License-Identifier: Apache-2.0
#pragma once

// KL-divergence forgetting against a frozen reference snapshot.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "acdu/errors.hpp"
#include "acdu/netcore.hpp"
#include "acdu/select.hpp"

namespace acdu {

/// -T_unl^2 * sum_b D_KL(p_ref_b || p_cur_b). Always <= 0.
inline double unlearning_loss(const Tensor& p_ref, const Tensor& p_cur, double t_unl) {
  if (p_ref.rows() != p_cur.rows() || p_ref.cols() != p_cur.cols()) {
    throw InputError("unlearning_loss: reference and current batches differ in shape");
  }
  if (!(t_unl > 0.0)) throw InputError("unlearning_loss: T_unl must be positive");
  double s = 0.0;
  for (std::size_t r = 0; r < p_ref.rows(); ++r) s += kl_divergence(p_ref.row(r), p_cur.row(r));
  return -t_unl * t_unl * s;
}

/// Forgetting objective over the current network's logits. `p_ref` is treated
/// as a constant, so no gradient reaches the snapshot.
inline Objective unlearning_objective(Tensor p_ref, double t_unl) {
  return through_softmax([p_ref = std::move(p_ref), t_unl](const Tensor& p_cur) {
    ProbLoss out{unlearning_loss(p_ref, p_cur, t_unl), Tensor(p_cur.rows(), p_cur.cols())};
    const double scale = t_unl * t_unl;
    for (std::size_t i = 0; i < p_cur.size(); ++i) {
      const double q = p_cur.values[i];
      // d/dq of -T^2 * sum ref*log(ref/q); zero where the clamp is active.
      out.dprobs.values[i] = q > kProbEps ? scale * p_ref.values[i] / q : 0.0;
    }
    return out;
  });
}

struct UnlearnBatchPlan {
  NetworkTag tag = NetworkTag::A;
  std::vector<std::vector<std::size_t>> batches;
  double t_unl = 0.05;
};

/// Split `targets` into mini-batches of `batch_size`; the last may be short.
/// Order is shuffled when an rng is supplied.
inline UnlearnBatchPlan make_unlearn_plan(NetworkTag tag, const IndexSet& targets, std::size_t batch_size, double t_unl,
                                          Rng* rng = nullptr) {
  if (batch_size < 1) throw ConfigError("unlearning batch size must be >= 1");
  if (!(t_unl > 0.0)) throw ConfigError("T_unl must be positive");
  std::vector<std::size_t> order(targets.begin(), targets.end());
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  UnlearnBatchPlan plan{tag, {}, t_unl};
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

/// Mean over `ids` of D_KL(reference || current).
inline double mean_kl(const NetworkParams& reference, const NetworkParams& current, const Tensor& inputs,
                      std::span<const std::size_t> ids) {
  if (ids.empty()) return 0.0;
  const Tensor x = gather_rows(inputs, ids);
  const Tensor p_ref = softmax_rows(forward(reference, x));
  const Tensor p_cur = softmax_rows(forward(current, x));
  double s = 0.0;
  for (std::size_t r = 0; r < ids.size(); ++r) s += kl_divergence(p_ref.row(r), p_cur.row(r));
  return s / static_cast<double>(ids.size());
}

struct ForgetStats {
  std::size_t num_targets = 0;
  double kl_before = 0.0;
  double kl_after = 0.0;
};

/// One pass over the plan: one SGD step per mini-batch on the forgetting
/// objective. `inputs` rows are indexed by sample id.
inline ForgetStats apply_unlearning(const UnlearnBatchPlan& plan, NetworkParams& params, const NetworkParams& reference,
                                    const Tensor& inputs, OptimizerState& opt, int epoch,
                                    const std::vector<bool>& trainable = {}) {
  std::vector<std::size_t> all;
  for (const auto& b : plan.batches) all.insert(all.end(), b.begin(), b.end());
  ForgetStats stats{all.size(), 0.0, 0.0};
  if (all.empty()) return stats;
  stats.kl_before = mean_kl(reference, params, inputs, all);
  for (const auto& batch : plan.batches) {
    const Tensor x = gather_rows(inputs, batch);
    Tensor p_ref = softmax_rows(forward(reference, x));
    const auto lg = loss_and_gradient(params, x, unlearning_objective(std::move(p_ref), plan.t_unl));
    sgd_step(params, lg.grads, opt, epoch, trainable);
  }
  stats.kl_after = mean_kl(reference, params, inputs, all);
  return stats;
}

inline void write_forgetting_header(std::ostream& os) { os << "epoch,network,num_targets,mean_kl_before,mean_kl_after\n"; }

inline void write_forgetting_row(std::ostream& os, int epoch, NetworkTag tag, const ForgetStats& s) {
  os << epoch << ',' << to_string(tag) << ',' << s.num_targets << ',' << textio::format_double(s.kl_before) << ','
     << textio::format_double(s.kl_after) << '\n';
}

}  // namespace acdu
