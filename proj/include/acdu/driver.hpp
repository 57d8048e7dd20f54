// SPDX-License-Identifier: Apache-2.0
#pragma once

// Full training schedule: warmup, preparation, and the unlearning period in
// which selection, forgetting and co-teaching interleave.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "acdu/config.hpp"
#include "acdu/coteach.hpp"
#include "acdu/datagen.hpp"
#include "acdu/errors.hpp"
#include "acdu/forget.hpp"
#include "acdu/netcore.hpp"
#include "acdu/oracle.hpp"
#include "acdu/select.hpp"

namespace acdu {

// ---------------------------------------------------------------------------
// Schedule gates

/// Selection runs every E_UP epochs once k >= E_start.
inline bool gate_selection(int k, int e_start, int e_up) { return k >= e_start && k % e_up == 0; }

/// Forgetting runs while k mod E_UP <= E_UD (the selection epoch included).
inline bool gate_forgetting(int k, int e_start, int e_up, int e_ud) { return k >= e_start && k % e_up <= e_ud; }

/// Epoch whose losses seed the first loss-drop comparison: E_start - E_UP, or
/// the first post-warmup epoch when that falls inside warmup.
inline int bootstrap_epoch(const ScheduleSpec& s) { return std::max(s.start - s.update_period, s.warmup + 1); }

// ---------------------------------------------------------------------------
// Metrics

struct EpochMetrics {
  int epoch = 0;
  double acc_a = 0.0;
  double acc_v = 0.0;
  double loss_a = 0.0;
  double loss_v = 0.0;
  std::size_t du_a = 0;
  std::size_t du_v = 0;
  std::size_t dt = 0;
  std::size_t hn = 0;  // noisy, judged clean by both networks this epoch
  std::size_t ln = 0;  // noisy, not judged clean by both
  std::size_t cs = 0;  // clean samples in D_t

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct Summary {
  double best = 0.0;
  double last = 0.0;
};

/// Best = max over epochs; Last = mean over the final min(10, n) epochs.
inline Summary summarize(const std::vector<double>& accs) {
  Summary s;
  if (accs.empty()) return s;
  s.best = *std::max_element(accs.begin(), accs.end());
  const std::size_t k = std::min<std::size_t>(10, accs.size());
  double sum = 0.0;
  for (std::size_t i = accs.size() - k; i < accs.size(); ++i) sum += accs[i];
  s.last = sum / static_cast<double>(k);
  return s;
}

struct RunMetrics {
  std::vector<EpochMetrics> epochs;

  Summary summary_a() const {
    std::vector<double> a;
    for (const auto& e : epochs) a.push_back(e.acc_a);
    return summarize(a);
  }
  Summary summary_v() const {
    std::vector<double> v;
    for (const auto& e : epochs) v.push_back(e.acc_v);
    return summarize(v);
  }
};

inline void write_metrics_header(std::ostream& os) {
  os << "epoch,acc_A,acc_V,loss_A,loss_V,du_A,du_V,dt,HN,LN,CS\n";
}

inline void write_metrics_row(std::ostream& os, const EpochMetrics& m) {
  os << m.epoch << ',' << textio::format_double(m.acc_a) << ',' << textio::format_double(m.acc_v) << ','
     << textio::format_double(m.loss_a) << ',' << textio::format_double(m.loss_v) << ',' << m.du_a << ',' << m.du_v
     << ',' << m.dt << ',' << m.hn << ',' << m.ln << ',' << m.cs << '\n';
}

// ---------------------------------------------------------------------------
// Observer hooks for audit output

struct RunObserver {
  virtual ~RunObserver() = default;
  virtual void on_selection(int /*epoch*/, const SelectionSets& /*sets*/, const std::vector<std::size_t>& /*train*/) {}
  virtual void on_forgetting(int /*epoch*/, NetworkTag /*tag*/, const ForgetStats& /*stats*/) {}
  virtual void on_codivide(int /*epoch*/, const CoTeachResult& /*res*/, const Dataset& /*ds*/) {}
  virtual void on_epoch(const EpochMetrics& /*m*/) {}
  virtual void on_warning(const std::string& /*msg*/) {}
};

// ---------------------------------------------------------------------------
// Prepared inputs

/// Independent seed streams derived from the run seed (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kDataSeed = 1, kNoiseSeed, kOracleSeed, kEmbedSeed, kInitA, kInitV, kTrainSeed };

inline TransitionMatrix noise_matrix(const NoiseSpec& spec, std::size_t C) {
  if (spec.kind == "none") return identity_matrix(C);
  if (spec.kind == "symmetric") return symmetric_matrix(C, spec.eta);
  if (spec.kind == "asymmetric") {
    return asymmetric_matrix(C, spec.eta, spec.pair_map.empty() ? cyclic_pair_map(C) : spec.pair_map);
  }
  throw ConfigError("noise.kind '" + spec.kind + "' has no transition matrix");
}

inline Dataset build_dataset(const RunConfig& c) {
  if (c.data.source == "file") return load_dataset(c.data.path);
  Dataset ds = make_blobs(c.data.classes, c.data.n_per_class, c.data.dim, c.data.spread,
                          derive_seed(c.run.seed, kDataSeed), c.data.n_test_per_class);
  const auto noise_seed = derive_seed(c.run.seed, kNoiseSeed);
  if (c.noise.kind == "instance") return instance_noise(std::move(ds), c.noise.eta, noise_seed);
  return inject_noise(std::move(ds), noise_matrix(c.noise, ds.num_classes), noise_seed);
}

inline OracleTable build_oracle(const RunConfig& c, const Dataset& ds) {
  if (c.oracle.source == "file") return load_oracle_file(c.oracle.path, ds.size());
  return synthetic_oracle(ds, c.oracle.accuracy, c.oracle.confidence, derive_seed(c.run.seed, kOracleSeed));
}

inline Architecture arch_a(const RunConfig& c, std::size_t input, std::size_t C) {
  Architecture a{{input}, activation_from_string(c.model.activation)};
  for (auto w : c.model.a_hidden) a.widths.push_back(w);
  a.widths.push_back(C);
  return a;
}

/// V = adapter layer on the frozen embeddings, then the classification head.
inline Architecture arch_v(const RunConfig& c, std::size_t embedding, std::size_t C) {
  Architecture a{{embedding, c.model.v_adapter}, activation_from_string(c.model.activation)};
  for (auto w : c.model.v_head) a.widths.push_back(w);
  a.widths.push_back(C);
  return a;
}

struct Experiment {
  RunConfig config;
  Dataset dataset;
  OracleTable oracle;
  Tensor features_a;  // rows by sample id
  Tensor features_v;  // oracle embeddings, rows by sample id
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
  std::vector<std::size_t> observed;  // by sample id
};

inline Experiment prepare(const RunConfig& c) {
  validate(c);
  Experiment e{c, build_dataset(c), {}, {}, {}, {}, {}, {}};
  e.oracle = build_oracle(c, e.dataset);
  if (e.oracle.num_classes() != e.dataset.num_classes) throw ConfigError("oracle and dataset class counts differ");
  if (e.oracle.size() != e.dataset.size()) throw ConfigError("oracle does not cover every sample");
  std::vector<std::size_t> all(e.dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  e.features_a = e.dataset.features(all);
  e.features_v = oracle_embeddings(e.dataset, e.oracle, c.oracle.embedding_dim, derive_seed(c.run.seed, kEmbedSeed),
                                   c.oracle.embedding_gain);
  e.train_ids = e.dataset.ids(Split::train);
  e.test_ids = e.dataset.ids(Split::test);
  e.observed = e.dataset.observed_labels(all);
  return e;
}

// ---------------------------------------------------------------------------
// Warmup

struct NetworkPair {
  NetworkParams a;
  NetworkParams v;
  OptimizerState opt_a;
  OptimizerState opt_v;
};

inline NetworkPair init_networks(const Experiment& e) {
  const auto& c = e.config;
  const std::size_t C = e.dataset.num_classes;
  NetworkPair n;
  n.a = init_network(arch_a(c, e.dataset.dim, C), derive_seed(c.run.seed, kInitA));
  n.v = init_network(arch_v(c, e.features_v.cols(), C), derive_seed(c.run.seed, kInitV));
  n.opt_a = make_optimizer(n.a, c.optim.lr_a, c.optim.momentum, c.optim.weight_decay, c.optim.decay_epoch);
  n.opt_v = make_optimizer(n.v, c.optim.lr_v, c.optim.momentum, c.optim.weight_decay, c.optim.decay_epoch);
  return n;
}

/// One shuffled supervised pass with per-sample soft targets. Returns the mean batch loss.
inline double supervised_pass(NetworkParams& net, OptimizerState& opt, const Tensor& inputs,
                              std::vector<std::size_t> ids, const Tensor& targets_by_id, std::size_t batch_size,
                              int epoch, const std::vector<bool>& trainable, Rng& rng) {
  std::shuffle(ids.begin(), ids.end(), rng);
  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < ids.size(); start += batch_size) {
    const std::size_t end = std::min(ids.size(), start + batch_size);
    const std::span<const std::size_t> batch(ids.data() + start, end - start);
    const auto lg = loss_and_gradient(net, gather_rows(inputs, batch),
                                      soft_cross_entropy_objective(gather_rows(targets_by_id, batch)));
    if (!std::isfinite(lg.value)) throw NumericalError("supervised loss became non-finite");
    sgd_step(net, lg.grads, opt, epoch, trainable);
    total += lg.value;
    ++steps;
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

inline Tensor one_hot_targets(const std::vector<std::size_t>& labels, std::size_t C) {
  Tensor t(labels.size(), C);
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, labels[i]) = 1.0;
  return t;
}

/// 0.5 * oracle prediction + 0.5 * one-hot observed label, rows by sample id.
inline Tensor warmup_v_targets(const Experiment& e) {
  const std::size_t C = e.dataset.num_classes;
  Tensor t(e.dataset.size(), C);
  for (std::size_t i = 0; i < e.dataset.size(); ++i) {
    const auto& p = e.oracle.at(i).probs;
    for (std::size_t c = 0; c < C; ++c) t.at(i, c) = 0.5 * p[c] + (c == e.observed[i] ? 0.5 : 0.0);
  }
  return t;
}

struct WarmupLoss {
  double a = 0.0;
  double v = 0.0;
};

/// A trains on observed labels; V's head trains on the averaged oracle/label targets.
inline WarmupLoss warmup_epoch(const Experiment& e, NetworkPair& n, int epoch, const CoTeachConfig& cot, Rng& rng) {
  const auto& c = e.config;
  const Tensor targets_a = one_hot_targets(e.observed, e.dataset.num_classes);
  WarmupLoss w;
  w.a = supervised_pass(n.a, n.opt_a, e.features_a, e.train_ids, targets_a, c.optim.batch_size, epoch, {}, rng);
  if (c.method.mode == "acdu" && !c.method.single_network) {
    w.v = supervised_pass(n.v, n.opt_v, e.features_v, e.train_ids, warmup_v_targets(e), c.optim.batch_size, epoch,
                          v_trainable_mask(n.v, epoch, cot), rng);
  }
  return w;
}

inline void warmup(const Experiment& e, NetworkPair& n, int e_warmup, const CoTeachConfig& cot, Rng& rng) {
  for (int k = 1; k <= e_warmup; ++k) warmup_epoch(e, n, k, cot, rng);
}

// ---------------------------------------------------------------------------
// Full run

struct RunResult {
  RunMetrics metrics;
  NetworkParams a;
  NetworkParams v;
};

inline CoTeachConfig coteach_config(const RunConfig& c) {
  CoTeachConfig cot;
  cot.batch_size = c.optim.batch_size;
  cot.tau_w = c.method.tau_w;
  cot.lambda_u = c.method.lambda_u;
  cot.t_sharp = c.method.t_sharp;
  cot.mixup_alpha = c.method.mixup_alpha;
  cot.reg_weight = c.method.reg_weight;
  cot.encoder_epoch = c.schedule.encoder;
  cot.v_adapter_layers = 1;
  cot.asymmetric = c.method.acd;
  cot.single_network = c.method.single_network;
  return cot;
}

namespace detail {

inline void tally(EpochMetrics& m, const CoTeachResult& r, const Dataset& ds, double tau) {
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    const auto& s = ds.samples[r.ids[i]];
    if (!s.noisy()) {
      ++m.cs;
    } else if (r.w_a[i] >= tau && r.w_v[i] >= tau) {
      ++m.hn;
    } else {
      ++m.ln;
    }
  }
}

inline void check_finite(const NetworkParams& p, int epoch, const char* net) {
  for (const auto& l : p.layers) {
    if (!l.weight.all_finite() || !l.bias.all_finite()) {
      throw NumericalError("non-finite parameters in net " + std::string(net) + " at epoch " + std::to_string(epoch));
    }
  }
}

}  // namespace detail

inline RunResult run(const Experiment& e, RunObserver* observer = nullptr) {
  const auto& c = e.config;
  const auto& sched = c.schedule;
  const CoTeachConfig cot = coteach_config(c);
  const bool naive = c.method.mode == "naive";
  const bool unlearning = !naive && c.method.unlearning;
  const std::size_t C = e.dataset.num_classes;

  NetworkPair n = init_networks(e);
  Rng rng(derive_seed(c.run.seed, kTrainSeed));
  RunMetrics metrics;
  TrajectoryStore store(e.train_ids.size());
  const auto train_labels = e.dataset.observed_labels(e.train_ids);
  const auto test_labels = e.dataset.true_labels(e.test_ids);
  const Tensor test_a = gather_rows(e.features_a, e.test_ids);
  const Tensor test_v = gather_rows(e.features_v, e.test_ids);
  const Tensor train_a = gather_rows(e.features_a, e.train_ids);
  const Tensor train_v = gather_rows(e.features_v, e.train_ids);
  const Tensor targets_a = one_hot_targets(e.observed, C);

  IndexSet dt(e.train_ids.begin(), e.train_ids.end());
  std::optional<SelectionSets> sets;
  std::optional<ReferenceSnapshot> snapshot;
  const int boot = bootstrap_epoch(sched);
  const ConditionToggles toggles{c.method.low_loss, c.method.loss_drop, c.method.clip_filter};

  for (int k = 1; k <= sched.max_epoch; ++k) {
    EpochMetrics m;
    m.epoch = k;
    if (naive) {
      m.loss_a = supervised_pass(n.a, n.opt_a, e.features_a, e.train_ids, targets_a, c.optim.batch_size, k, {}, rng);
    } else if (k <= sched.warmup) {
      const auto w = warmup_epoch(e, n, k, cot, rng);
      m.loss_a = w.a;
      m.loss_v = w.v;
    } else {
      if (unlearning && (k == boot || gate_selection(k, sched.start, sched.update_period))) {
        store.record(NetworkTag::A, k, per_sample_losses(n.a, train_a, train_labels));
        store.record(NetworkTag::V, k, per_sample_losses(n.v, train_v, train_labels));
      }
      if (unlearning && gate_selection(k, sched.start, sched.update_period)) {
        const int prev = store.has(NetworkTag::A, k - sched.update_period) ? k - sched.update_period : boot;
        if (prev >= k) throw StateError("no earlier loss checkpoint for selection at epoch " + std::to_string(k));
        SelectionRequest req{e.train_ids, train_labels, k, prev, c.method.p_low, c.method.p_drop, toggles};
        auto [s, snap] = unlearning_setup(req, n.a, n.v, store, e.oracle);
        dt = s.dt;
        if (observer) observer->on_selection(k, s, e.train_ids);
        sets = std::move(s);
        snapshot = std::move(snap);
      }
      if (unlearning && snapshot && gate_forgetting(k, sched.start, sched.update_period, sched.unlearn_duration)) {
        for (NetworkTag tag : {NetworkTag::A, NetworkTag::V}) {
          const IndexSet& targets = tag == NetworkTag::A ? sets->du_a : sets->du_v;
          const auto plan = make_unlearn_plan(tag, targets, c.method.unlearn_batch, *c.method.t_unl, &rng);
          const auto stats =
              tag == NetworkTag::A
                  ? apply_unlearning(plan, n.a, snapshot->a, e.features_a, n.opt_a, k)
                  : apply_unlearning(plan, n.v, snapshot->v, e.features_v, n.opt_v, k, v_trainable_mask(n.v, k, cot));
          if (observer) observer->on_forgetting(k, tag, stats);
        }
      }
      const CoTeachInputs in{&e.features_a, &e.features_v, e.observed};
      const auto res = asy_cot_epoch(dt, n.a, n.v, n.opt_a, n.opt_v, in, k, cot, rng);
      if (observer) {
        if (res.skipped_a) observer->on_warning("epoch " + std::to_string(k) + ": net A has no labeled samples");
        if (res.skipped_v && !c.method.single_network) {
          observer->on_warning("epoch " + std::to_string(k) + ": net V has no labeled samples; update skipped");
        }
        observer->on_codivide(k, res, e.dataset);
      }
      m.loss_a = res.mean_loss_a;
      m.loss_v = res.mean_loss_v;
      detail::tally(m, res, e.dataset, cot.tau_w);
    }
    detail::check_finite(n.a, k, "A");
    detail::check_finite(n.v, k, "V");
    m.acc_a = accuracy(n.a, test_a, test_labels);
    m.acc_v = naive || c.method.single_network ? 0.0 : accuracy(n.v, test_v, test_labels);
    m.dt = dt.size();
    if (sets) {
      m.du_a = sets->du_a.size();
      m.du_v = sets->du_v.size();
    }
    if (!std::isfinite(m.loss_a) || !std::isfinite(m.loss_v)) {
      throw NumericalError("non-finite training loss at epoch " + std::to_string(k));
    }
    if (observer) observer->on_epoch(m);
    metrics.epochs.push_back(m);
  }
  return {std::move(metrics), std::move(n.a), std::move(n.v)};
}

inline RunResult run(const RunConfig& c, RunObserver* observer = nullptr) { return run(prepare(c), observer); }

// ---------------------------------------------------------------------------
// File output

/// Writes metrics.csv, forgetting.csv, and (when audits are on) codivide.csv
/// and selection_<k>.csv into a run directory.
class FileObserver : public RunObserver {
 public:
  FileObserver(const std::filesystem::path& dir, bool audits, std::ostream* log = nullptr)
      : dir_(dir), audits_(audits), log_(log) {
    std::filesystem::create_directories(dir_);
    metrics_.open(dir_ / "metrics.csv", std::ios::binary);
    forgetting_.open(dir_ / "forgetting.csv", std::ios::binary);
    if (!metrics_ || !forgetting_) throw IngestionError("cannot write into run directory " + dir_.string());
    write_metrics_header(metrics_);
    write_forgetting_header(forgetting_);
    if (audits_) {
      codivide_.open(dir_ / "codivide.csv", std::ios::binary);
      codivide_ << "epoch,sample_id,w_A,w_V,labeled_A,labeled_V,observed_label,true_label\n";
    }
  }

  void on_selection(int epoch, const SelectionSets& sets, const std::vector<std::size_t>& train) override {
    if (!audits_) return;
    std::ofstream os(dir_ / ("selection_" + std::to_string(epoch) + ".csv"), std::ios::binary);
    write_selection_audit(os, sets, train);
  }

  void on_forgetting(int epoch, NetworkTag tag, const ForgetStats& stats) override {
    write_forgetting_row(forgetting_, epoch, tag, stats);
  }

  void on_codivide(int epoch, const CoTeachResult& r, const Dataset& ds) override {
    if (!audits_) return;
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
      const auto& s = ds.samples[r.ids[i]];
      codivide_ << epoch << ',' << s.id << ',' << textio::format_double(r.w_a[i]) << ','
                << textio::format_double(r.w_v[i]) << ',' << (r.w_v[i] >= tau_) << ',' << (r.w_a[i] >= tau_) << ','
                << s.observed_label << ',' << s.true_label << '\n';
    }
  }

  void on_epoch(const EpochMetrics& m) override {
    write_metrics_row(metrics_, m);
    metrics_.flush();
  }

  void on_warning(const std::string& msg) override {
    if (log_) *log_ << "warning: " << msg << '\n';
  }

  void set_tau(double tau) { tau_ = tau; }

 private:
  std::filesystem::path dir_;
  bool audits_;
  std::ostream* log_;
  double tau_ = 0.5;
  std::ofstream metrics_;
  std::ofstream forgetting_;
  std::ofstream codivide_;
};

inline void save_checkpoint_file(const std::filesystem::path& path, const NetworkParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write checkpoint " + path.string());
  save_checkpoint(os, p);
}

inline NetworkParams load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

}  // namespace acdu
