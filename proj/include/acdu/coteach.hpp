// SPDX-License-Identifier: Apache-2.0
#pragma once

// Asymmetric co-teaching: per-network two-component GMM over losses,
// cross-network co-divide, pseudo-labelling, Mixup, and the training
// objectives of the scratch network (A) and the pretrained one (V).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "acdu/errors.hpp"
#include "acdu/netcore.hpp"
#include "acdu/select.hpp"

namespace acdu {

// ---------------------------------------------------------------------------
// Two-component 1-D GMM

struct GmmOptions {
  int max_iter = 100;
  double tolerance = 1e-6;
  double variance_floor = 1e-4;
  bool normalize = true;  // min-max scale losses to [0, 1] before EM
  bool swap_init = false;  // start with the component order reversed
};

/// Component parameters are reported in the original loss scale.
struct GmmFit {
  std::array<double, 2> weight{0.5, 0.5};
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> variance{0.0, 0.0};
  std::size_t clean_component = 0;  // index of the smaller mean
  std::vector<double> clean_posterior;
  std::vector<double> log_likelihood;  // per parameter state, initial state first (normalized scale)
  std::vector<bool> floor_events;      // log_likelihood[t+1] followed a variance-floor clamp
  int iterations = 0;
};

namespace detail {

inline double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

inline double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct GmmState {
  std::array<double, 2> w, mu, var;
};

/// E-step: responsibilities of component 0, plus the data log-likelihood.
inline double e_step(std::span<const double> x, const GmmState& s, std::vector<double>& gamma0) {
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double l0 = std::log(s.w[0]) + log_normal_pdf(x[i], s.mu[0], s.var[0]);
    const double l1 = std::log(s.w[1]) + log_normal_pdf(x[i], s.mu[1], s.var[1]);
    const double lse = log_sum_exp(l0, l1);
    gamma0[i] = std::exp(l0 - lse);
    ll += lse;
  }
  return ll;
}

inline double nearest_rank(const std::vector<double>& sorted, double p) {
  const auto idx = static_cast<std::size_t>(std::lround(p * static_cast<double>(sorted.size() - 1)));
  return sorted[idx];
}

}  // namespace detail

/// EM for a two-component Gaussian mixture over per-sample losses. Returns
/// the posterior of the smaller-mean ("clean") component for every sample.
inline GmmFit fit_gmm_1d(std::span<const double> losses, const GmmOptions& opt = {}) {
  const std::size_t n = losses.size();
  if (n < 2) throw InputError("fit_gmm_1d: need at least 2 samples");
  for (double v : losses) {
    if (!std::isfinite(v)) throw InputError("fit_gmm_1d: non-finite loss");
  }
  const auto [lo_it, hi_it] = std::minmax_element(losses.begin(), losses.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;

  GmmFit fit;
  if (range <= 0.0) {
    fit.mean = {lo, lo};
    fit.variance = {opt.variance_floor, opt.variance_floor};
    fit.clean_posterior.assign(n, 0.5);
    return fit;
  }
  const double scale = opt.normalize ? range : 1.0;
  const double shift = opt.normalize ? lo : 0.0;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (losses[i] - shift) / scale;
  const double floor = opt.normalize ? opt.variance_floor : opt.variance_floor * range * range;

  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  detail::GmmState s;
  s.mu = {detail::nearest_rank(sorted, 0.1), detail::nearest_rank(sorted, 0.9)};
  if (s.mu[0] == s.mu[1]) s.mu = {sorted.front(), sorted.back()};
  double mean_all = 0.0;
  for (double v : x) mean_all += v;
  mean_all /= static_cast<double>(n);
  double var_all = 0.0;
  for (double v : x) var_all += (v - mean_all) * (v - mean_all);
  var_all = std::max(var_all / static_cast<double>(n), floor);
  s.var = {var_all, var_all};
  s.w = {0.5, 0.5};
  if (opt.swap_init) std::swap(s.mu[0], s.mu[1]);

  std::vector<double> gamma(n);
  for (int it = 0; it < opt.max_iter; ++it) {
    const double ll = detail::e_step(x, s, gamma);
    if (fit.log_likelihood.empty()) fit.log_likelihood.push_back(ll);
    detail::GmmState next = s;
    bool floored = false;
    std::array<double, 2> nk{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      nk[0] += gamma[i];
      nk[1] += 1.0 - gamma[i];
    }
    for (int k = 0; k < 2; ++k) {
      if (nk[k] < 1e-12) continue;  // empty component keeps its parameters
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += (k == 0 ? gamma[i] : 1.0 - gamma[i]) * x[i];
      m /= nk[k];
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        v += (k == 0 ? gamma[i] : 1.0 - gamma[i]) * (x[i] - m) * (x[i] - m);
      }
      v /= nk[k];
      if (v < floor) {
        v = floor;
        floored = true;
      }
      next.w[k] = nk[k] / static_cast<double>(n);
      next.mu[k] = m;
      next.var[k] = v;
    }
    const double wsum = next.w[0] + next.w[1];
    next.w[0] /= wsum;
    next.w[1] = 1.0 - next.w[0];

    double change = 0.0;
    for (int k = 0; k < 2; ++k) {
      change += (next.w[k] - s.w[k]) * (next.w[k] - s.w[k]);
      change += (next.mu[k] - s.mu[k]) * (next.mu[k] - s.mu[k]);
      const double dsd = std::sqrt(next.var[k]) - std::sqrt(s.var[k]);
      change += dsd * dsd;
    }
    s = next;
    fit.iterations = it + 1;
    fit.log_likelihood.push_back(detail::e_step(x, s, gamma));
    fit.floor_events.push_back(floored);
    if (std::sqrt(change) < opt.tolerance) break;
  }
  detail::e_step(x, s, gamma);

  for (int k = 0; k < 2; ++k) {
    fit.weight[k] = s.w[k];
    fit.mean[k] = shift + scale * s.mu[k];
    fit.variance[k] = s.var[k] * scale * scale;
  }
  fit.clean_posterior.resize(n);
  if (s.mu[0] == s.mu[1]) {
    fit.clean_posterior.assign(n, 0.5);
    return fit;
  }
  fit.clean_component = s.mu[0] < s.mu[1] ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) fit.clean_posterior[i] = fit.clean_component == 0 ? gamma[i] : 1.0 - gamma[i];
  return fit;
}

// ---------------------------------------------------------------------------
// Co-divide

struct LabeledEntry {
  std::size_t id = 0;
  std::size_t label = 0;
  double w = 0.0;  // peer's clean probability
};

struct CoDivide {
  std::vector<LabeledEntry> labeled_a;  // keyed on W_V
  IndexSet unlabeled_a;
  std::vector<LabeledEntry> labeled_v;  // keyed on W_A
  IndexSet unlabeled_v;                 // complement of labeled_v; used only by the symmetric ablation
};

/// Net A's split is keyed on W_V and net V's on W_A. w >= tau counts as labeled.
inline CoDivide co_divide(std::span<const std::size_t> ids, std::span<const std::size_t> labels,
                          std::span<const double> w_a, std::span<const double> w_v, double tau_w) {
  if (ids.size() != labels.size() || ids.size() != w_a.size() || ids.size() != w_v.size()) {
    throw InputError("co_divide: inputs are not aligned");
  }
  CoDivide d;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (w_v[i] >= tau_w) d.labeled_a.push_back({ids[i], labels[i], w_v[i]});
    else d.unlabeled_a.push_back(ids[i]);
    if (w_a[i] >= tau_w) d.labeled_v.push_back({ids[i], labels[i], w_a[i]});
    else d.unlabeled_v.push_back(ids[i]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Pseudo-labels

/// p^(1/T), renormalized.
inline std::vector<double> sharpen(std::span<const double> p, double t_sharp) {
  if (!(t_sharp > 0.0)) throw InputError("sharpen: temperature must be positive");
  std::vector<double> out(p.size());
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    out[c] = std::pow(std::max(p[c], 0.0), 1.0 / t_sharp);
    s += out[c];
  }
  if (s <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (auto& v : out) v /= s;
  return out;
}

inline std::vector<double> one_hot(std::size_t label, std::size_t C) {
  std::vector<double> y(C, 0.0);
  y.at(label) = 1.0;
  return y;
}

/// Labeled-sample co-refinement: sharpen(w*y + (1-w)*p_model).
inline std::vector<double> refine_label(std::span<const double> y, double w, std::span<const double> p_model,
                                        double t_sharp) {
  if (y.size() != p_model.size()) throw InputError("refine_label: length mismatch");
  if (!(w >= 0.0 && w <= 1.0)) throw InputError("refine_label: w must be in [0, 1]");
  std::vector<double> mix(y.size());
  for (std::size_t c = 0; c < y.size(); ++c) mix[c] = w * y[c] + (1.0 - w) * p_model[c];
  return sharpen(mix, t_sharp);
}

/// Unlabeled-sample co-guessing: sharpen of the two networks' mean prediction.
inline std::vector<double> guess_label(std::span<const double> p_a, std::span<const double> p_v, double t_sharp) {
  if (p_a.size() != p_v.size()) throw InputError("guess_label: length mismatch");
  std::vector<double> mean(p_a.size());
  for (std::size_t c = 0; c < p_a.size(); ++c) mean[c] = 0.5 * (p_a[c] + p_v[c]);
  return sharpen(mean, t_sharp);
}

// ---------------------------------------------------------------------------
// Mixup

/// lambda ~ Beta(alpha, alpha), folded to max(lambda, 1 - lambda).
inline double sample_mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw InputError("mixup: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  const double lambda = (a + b) > 0.0 ? a / (a + b) : 0.5;
  return std::max(lambda, 1.0 - lambda);
}

struct MixupResult {
  std::vector<double> x;
  std::vector<double> y;
  double lambda = 1.0;
};

inline MixupResult mixup_pair(std::span<const double> x_i, std::span<const double> y_i, std::span<const double> x_j,
                              std::span<const double> y_j, double lambda) {
  if (x_i.size() != x_j.size() || y_i.size() != y_j.size()) throw InputError("mixup: operand size mismatch");
  MixupResult r{std::vector<double>(x_i.size()), std::vector<double>(y_i.size()), lambda};
  for (std::size_t d = 0; d < x_i.size(); ++d) r.x[d] = lambda * x_i[d] + (1.0 - lambda) * x_j[d];
  for (std::size_t c = 0; c < y_i.size(); ++c) r.y[c] = lambda * y_i[c] + (1.0 - lambda) * y_j[c];
  return r;
}

inline MixupResult mixup(std::span<const double> x_i, std::span<const double> y_i, std::span<const double> x_j,
                         std::span<const double> y_j, double alpha, std::uint64_t seed) {
  Rng rng(seed);
  return mixup_pair(x_i, y_i, x_j, y_j, sample_mixup_lambda(alpha, rng));
}

// ---------------------------------------------------------------------------
// Losses over batches of probability rows (batch-mean reductions)

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError(std::string(what) + ": shape mismatch");
}

inline std::vector<double> column_mean(const Tensor& p) {
  std::vector<double> m(p.cols(), 0.0);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t c = 0; c < p.cols(); ++c) m[c] += p.at(r, c);
  }
  for (auto& v : m) v /= static_cast<double>(p.rows());
  return m;
}

}  // namespace detail

/// Mean over rows of -y^T log p.
inline double loss_labeled(const Tensor& targets, const Tensor& probs) {
  detail::check_same_shape(targets, probs, "loss_labeled");
  if (probs.rows() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) s -= targets.values[i] * std::log(clamp_prob(probs.values[i]));
  return s / static_cast<double>(probs.rows());
}

/// Mean over rows of ||y - p||^2.
inline double loss_unlabeled(const Tensor& targets, const Tensor& probs) {
  detail::check_same_shape(targets, probs, "loss_unlabeled");
  if (probs.rows() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d = targets.values[i] - probs.values[i];
    s += d * d;
  }
  return s / static_cast<double>(probs.rows());
}

/// Uniform-prior penalty sum_c (1/C) log((1/C) / mean_p_c).
inline double loss_reg(std::span<const double> mean_prob) {
  const double prior = 1.0 / static_cast<double>(mean_prob.size());
  double s = 0.0;
  for (double p : mean_prob) s += prior * std::log(prior / clamp_prob(p));
  return s;
}

inline double loss_reg(const Tensor& probs) { return loss_reg(detail::column_mean(probs)); }

/// Gradient helpers w.r.t. probabilities, matching the reductions above.
inline ProbLoss labeled_term(const Tensor& targets, const Tensor& probs) {
  ProbLoss out{loss_labeled(targets, probs), Tensor(probs.rows(), probs.cols())};
  const double inv_b = 1.0 / static_cast<double>(std::max<std::size_t>(probs.rows(), 1));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs.values[i];
    out.dprobs.values[i] = p > kProbEps ? -targets.values[i] * inv_b / p : 0.0;
  }
  return out;
}

inline ProbLoss unlabeled_term(const Tensor& targets, const Tensor& probs) {
  ProbLoss out{loss_unlabeled(targets, probs), Tensor(probs.rows(), probs.cols())};
  const double inv_b = 1.0 / static_cast<double>(std::max<std::size_t>(probs.rows(), 1));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.dprobs.values[i] = 2.0 * (probs.values[i] - targets.values[i]) * inv_b;
  }
  return out;
}

inline ProbLoss reg_term(const Tensor& probs) {
  const auto mean = detail::column_mean(probs);
  ProbLoss out{loss_reg(mean), Tensor(probs.rows(), probs.cols())};
  const double prior = 1.0 / static_cast<double>(probs.cols());
  const double inv_b = 1.0 / static_cast<double>(std::max<std::size_t>(probs.rows(), 1));
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      out.dprobs.at(r, c) = mean[c] > kProbEps ? -prior / mean[c] * inv_b : 0.0;
    }
  }
  return out;
}

inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor out(end - begin, t.cols());
  std::copy(t.values.begin() + static_cast<std::ptrdiff_t>(begin * t.cols()),
            t.values.begin() + static_cast<std::ptrdiff_t>(end * t.cols()), out.values.begin());
  return out;
}

/// L_x on rows [0, n_labeled) + lambda_u * L_u on the remaining rows +
/// reg_weight * L_reg on all rows.
inline Objective semi_supervised_objective(Tensor targets, std::size_t n_labeled, double lambda_u, double reg_weight) {
  return through_softmax([targets = std::move(targets), n_labeled, lambda_u, reg_weight](const Tensor& probs) {
    detail::check_same_shape(targets, probs, "semi_supervised_objective");
    const std::size_t n = probs.rows();
    ProbLoss out{0.0, Tensor(n, probs.cols())};
    auto accumulate = [&](const ProbLoss& part, std::size_t row_offset, double weight) {
      out.value += weight * part.value;
      for (std::size_t i = 0; i < part.dprobs.size(); ++i) {
        out.dprobs.values[row_offset * probs.cols() + i] += weight * part.dprobs.values[i];
      }
    };
    if (n_labeled > 0) {
      accumulate(labeled_term(slice_rows(targets, 0, n_labeled), slice_rows(probs, 0, n_labeled)), 0, 1.0);
    }
    if (n > n_labeled && lambda_u != 0.0) {
      accumulate(unlabeled_term(slice_rows(targets, n_labeled, n), slice_rows(probs, n_labeled, n)), n_labeled,
                 lambda_u);
    }
    if (reg_weight != 0.0) accumulate(reg_term(probs), 0, reg_weight);
    return out;
  });
}

/// Soft-target cross-entropy (mean over rows), used for warmup and baselines.
inline Objective soft_cross_entropy_objective(Tensor targets) {
  return through_softmax([targets = std::move(targets)](const Tensor& probs) { return labeled_term(targets, probs); });
}

// ---------------------------------------------------------------------------
// One co-teaching epoch

struct CoTeachConfig {
  std::size_t batch_size = 64;
  double tau_w = 0.5;
  double lambda_u = 1.0;
  double t_sharp = 0.5;
  double mixup_alpha = 4.0;
  double reg_weight = 1.0;
  int encoder_epoch = 25;          // before this epoch only V's head trains
  std::size_t v_adapter_layers = 1;  // leading layers of V that form the adapter
  bool asymmetric = true;          // false: V also trains on its unlabeled split
  bool single_network = false;     // A divides on its own GMM; V is not used
  GmmOptions gmm;
};

/// Inputs for both networks, rows indexed by sample id.
struct CoTeachInputs {
  const Tensor* features_a = nullptr;
  const Tensor* features_v = nullptr;
  std::span<const std::size_t> observed_labels;  // indexed by sample id
};

struct CoTeachResult {
  IndexSet ids;  // D_t in the order of w_a / w_v
  std::vector<double> w_a;
  std::vector<double> w_v;
  CoDivide divide;
  double mean_loss_a = 0.0;
  double mean_loss_v = 0.0;
  std::size_t steps_a = 0;
  std::size_t steps_v = 0;
  bool skipped_a = false;
  bool skipped_v = false;
};

inline std::vector<bool> v_trainable_mask(const NetworkParams& v, int epoch, const CoTeachConfig& cfg) {
  std::vector<bool> mask(v.layers.size(), true);
  if (epoch < cfg.encoder_epoch) {
    for (std::size_t l = 0; l < std::min(cfg.v_adapter_layers, mask.size()); ++l) mask[l] = false;
  }
  return mask;
}

namespace detail {

/// Train one network for one pass over `labeled`, pairing each labeled batch
/// with an equal-size slice of `unlabeled`. Mixup partners come from the
/// concatenated batch. Returns (mean objective, steps).
inline std::pair<double, std::size_t> semi_supervised_pass(NetworkParams& net, const NetworkParams* peer,
                                                           OptimizerState& opt, const Tensor& inputs,
                                                           const Tensor* peer_inputs,
                                                           std::vector<LabeledEntry> labeled, IndexSet unlabeled,
                                                           double lambda_u, const CoTeachConfig& cfg, int epoch,
                                                           const std::vector<bool>& trainable, Rng& rng) {
  const std::size_t C = net.arch.num_classes();
  std::shuffle(labeled.begin(), labeled.end(), rng);
  std::shuffle(unlabeled.begin(), unlabeled.end(), rng);
  const std::size_t B = cfg.batch_size;
  double total = 0.0;
  std::size_t steps = 0;
  std::size_t u_cursor = 0;
  for (std::size_t start = 0; start < labeled.size(); start += B) {
    const std::size_t end = std::min(labeled.size(), start + B);
    std::vector<std::size_t> lab_ids;
    for (std::size_t i = start; i < end; ++i) lab_ids.push_back(labeled[i].id);
    std::vector<std::size_t> unl_ids;
    if (!unlabeled.empty() && lambda_u != 0.0) {
      for (std::size_t k = 0; k < lab_ids.size(); ++k) {
        unl_ids.push_back(unlabeled[u_cursor]);
        u_cursor = (u_cursor + 1) % unlabeled.size();
      }
    }
    std::vector<std::size_t> all_ids = lab_ids;
    all_ids.insert(all_ids.end(), unl_ids.begin(), unl_ids.end());
    const Tensor x = gather_rows(inputs, all_ids);
    const Tensor p_self = softmax_rows(forward(net, x));
    Tensor p_peer;
    if (!unl_ids.empty()) {
      const Tensor xu_peer = gather_rows(*peer_inputs, unl_ids);
      p_peer = softmax_rows(forward(*peer, xu_peer));
    }
    Tensor targets(all_ids.size(), C);
    for (std::size_t r = 0; r < lab_ids.size(); ++r) {
      const auto& e = labeled[start + r];
      const auto y = refine_label(one_hot(e.label, C), e.w, p_self.row(r), cfg.t_sharp);
      std::copy(y.begin(), y.end(), targets.row(r).begin());
    }
    for (std::size_t r = 0; r < unl_ids.size(); ++r) {
      const auto y = guess_label(p_self.row(lab_ids.size() + r), p_peer.row(r), cfg.t_sharp);
      std::copy(y.begin(), y.end(), targets.row(lab_ids.size() + r).begin());
    }
    // Mixup over the combined pool, one lambda per batch.
    const double lambda = sample_mixup_lambda(cfg.mixup_alpha, rng);
    std::vector<std::size_t> perm(all_ids.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor mixed_x(x.rows(), x.cols());
    Tensor mixed_y(targets.rows(), C);
    for (std::size_t r = 0; r < all_ids.size(); ++r) {
      const auto m = mixup_pair(x.row(r), targets.row(r), x.row(perm[r]), targets.row(perm[r]), lambda);
      std::copy(m.x.begin(), m.x.end(), mixed_x.row(r).begin());
      std::copy(m.y.begin(), m.y.end(), mixed_y.row(r).begin());
    }
    const auto lg = loss_and_gradient(
        net, mixed_x, semi_supervised_objective(std::move(mixed_y), lab_ids.size(), lambda_u, cfg.reg_weight));
    if (!std::isfinite(lg.value)) throw NumericalError("co-teaching loss became non-finite");
    sgd_step(net, lg.grads, opt, epoch, trainable);
    total += lg.value;
    ++steps;
  }
  return {steps ? total / static_cast<double>(steps) : 0.0, steps};
}

}  // namespace detail

/// Fit a GMM to each network's losses over D_t, co-divide, then train A
/// semi-supervised (L_x + lambda_u L_u + L_reg) and V on its labeled split only
/// (L_x + L_reg). V's adapter stays frozen before cfg.encoder_epoch.
inline CoTeachResult asy_cot_epoch(const IndexSet& dt, NetworkParams& net_a, NetworkParams& net_v,
                                   OptimizerState& opt_a, OptimizerState& opt_v, const CoTeachInputs& in, int epoch,
                                   const CoTeachConfig& cfg, Rng& rng) {
  if (dt.size() < 2) throw InputError("asy_cot_epoch: D_t needs at least 2 samples");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  CoTeachResult res;
  res.ids = dt;
  std::vector<std::size_t> labels(dt.size());
  for (std::size_t i = 0; i < dt.size(); ++i) labels[i] = in.observed_labels[dt[i]];

  const auto losses_a = per_sample_losses(net_a, gather_rows(*in.features_a, dt), labels);
  res.w_a = fit_gmm_1d(losses_a, cfg.gmm).clean_posterior;
  if (cfg.single_network) {
    res.w_v = res.w_a;
  } else {
    const auto losses_v = per_sample_losses(net_v, gather_rows(*in.features_v, dt), labels);
    res.w_v = fit_gmm_1d(losses_v, cfg.gmm).clean_posterior;
  }
  res.divide = co_divide(dt, labels, res.w_a, res.w_v, cfg.tau_w);

  // Both peers' predictions are taken from the parameters at the start of the epoch.
  const NetworkParams peer_a = net_a;
  const NetworkParams peer_v = net_v;

  if (res.divide.labeled_a.empty()) {
    res.skipped_a = true;
  } else {
    const NetworkParams& peer = cfg.single_network ? peer_a : peer_v;
    const Tensor* peer_inputs = cfg.single_network ? in.features_a : in.features_v;
    std::tie(res.mean_loss_a, res.steps_a) =
        detail::semi_supervised_pass(net_a, &peer, opt_a, *in.features_a, peer_inputs, res.divide.labeled_a,
                                     res.divide.unlabeled_a, cfg.lambda_u, cfg, epoch, {}, rng);
  }

  if (cfg.single_network) {
    res.skipped_v = true;
    return res;
  }
  if (res.divide.labeled_v.empty()) {
    res.skipped_v = true;
    return res;
  }
  const auto trainable = v_trainable_mask(net_v, epoch, cfg);
  const IndexSet unlabeled_v = cfg.asymmetric ? IndexSet{} : res.divide.unlabeled_v;
  const double lambda_v = cfg.asymmetric ? 0.0 : cfg.lambda_u;
  std::tie(res.mean_loss_v, res.steps_v) =
      detail::semi_supervised_pass(net_v, &peer_a, opt_v, *in.features_v, in.features_a, res.divide.labeled_v,
                                   unlabeled_v, lambda_v, cfg, epoch, trainable, rng);
  return res;
}

}  // namespace acdu
