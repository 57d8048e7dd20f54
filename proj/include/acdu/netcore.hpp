// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal differentiable MLP core: dense tensors, forward/backward passes,
// probability-space losses, and SGD with momentum, weight decay and step decay.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "acdu/errors.hpp"
#include "acdu/textio.hpp"

namespace acdu {

using Rng = std::mt19937_64;

/// Clamp applied to every probability before a logarithm.
inline constexpr double kProbEps = 1e-7;

/// Dense row-major tensor. Networks only use rank 1 and rank 2.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, values(rows * cols, fill) {}

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Tensor(0, 0);
    Tensor t(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != t.cols()) throw InputError("Tensor::from_rows: ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
    }
    return t;
  }

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  std::size_t size() const { return values.size(); }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

  bool consistent() const {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          std::multiplies<>{});
    return n == values.size();
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// Layer widths from input to output; hidden layers share one activation.
struct Architecture {
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu;

  std::size_t input_width() const { return widths.front(); }
  std::size_t num_classes() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// weight is (out x in), bias is (1 x out).
struct Layer {
  Tensor weight;
  Tensor bias;
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct NetworkParams {
  Architecture arch;
  std::vector<Layer> layers;
  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// Parameter-shaped container; also used for velocity buffers.
using Gradients = std::vector<Layer>;

inline Gradients zeros_like(const NetworkParams& params) {
  Gradients g;
  g.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    g.push_back({Tensor(l.weight.rows(), l.weight.cols()), Tensor(1, l.bias.cols())});
  }
  return g;
}

inline void validate(const Architecture& arch) {
  if (arch.widths.size() < 2) throw ConfigError("architecture needs at least input and output widths");
  for (auto w : arch.widths) {
    if (w == 0) throw ConfigError("architecture widths must be positive");
  }
}

/// Glorot-uniform weights, zero biases.
inline NetworkParams init_network(const Architecture& arch, Rng& rng) {
  validate(arch);
  NetworkParams p{arch, {}};
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const std::size_t in = arch.widths[l];
    const std::size_t out = arch.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer{Tensor(out, in), Tensor(1, out)};
    for (auto& w : layer.weight.values) w = dist(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline NetworkParams init_network(const Architecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  return init_network(arch, rng);
}

namespace detail {

inline double activate(Activation a, double x) {
  return a == Activation::relu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

/// Derivative expressed through the activation output.
inline double activate_grad(Activation a, double pre, double post) {
  return a == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

}  // namespace detail

/// Layer inputs and pre-activations recorded during a forward pass.
struct ForwardCache {
  std::vector<Tensor> inputs;  // inputs[l] feeds layer l
  std::vector<Tensor> pre;     // pre[l] = inputs[l] * W_l^T + b_l
};

inline Tensor forward(const NetworkParams& params, const Tensor& batch, ForwardCache* cache = nullptr) {
  if (batch.shape.size() != 2 || batch.cols() != params.arch.input_width()) {
    throw ConfigError("forward: batch width " + std::to_string(batch.cols()) +
                      " does not match network input width " +
                      std::to_string(params.arch.input_width()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Tensor x = batch;
  const std::size_t n_layers = params.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = params.layers[l];
    const std::size_t out = layer.weight.rows();
    const std::size_t in = layer.weight.cols();
    Tensor z(x.rows(), out);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto xr = x.row(r);
      for (std::size_t o = 0; o < out; ++o) {
        const auto wr = layer.weight.row(o);
        double s = layer.bias.values[o];
        for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
        z.at(r, o) = s;
      }
    }
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(z);
    }
    if (l + 1 < n_layers) {
      for (auto& v : z.values) v = detail::activate(params.arch.activation, v);
    }
    x = std::move(z);
  }
  return x;
}

/// Backpropagate d(loss)/d(logits) into parameter gradients.
inline Gradients backward(const NetworkParams& params, const ForwardCache& cache, const Tensor& dlogits) {
  Gradients grads = zeros_like(params);
  Tensor delta = dlogits;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const Layer& layer = params.layers[l];
    const Tensor& in = cache.inputs[l];
    const std::size_t out_w = layer.weight.rows();
    const std::size_t in_w = layer.weight.cols();
    Layer& g = grads[l];
    for (std::size_t r = 0; r < in.rows(); ++r) {
      const auto dr = delta.row(r);
      const auto xr = in.row(r);
      for (std::size_t o = 0; o < out_w; ++o) {
        if (dr[o] == 0.0) continue;
        auto gw = g.weight.row(o);
        for (std::size_t i = 0; i < in_w; ++i) gw[i] += dr[o] * xr[i];
        g.bias.values[o] += dr[o];
      }
    }
    if (l == 0) break;
    Tensor next(in.rows(), in_w);
    const Tensor& prev_pre = cache.pre[l - 1];
    for (std::size_t r = 0; r < in.rows(); ++r) {
      const auto dr = delta.row(r);
      auto nr = next.row(r);
      for (std::size_t o = 0; o < out_w; ++o) {
        if (dr[o] == 0.0) continue;
        const auto wr = layer.weight.row(o);
        for (std::size_t i = 0; i < in_w; ++i) nr[i] += dr[o] * wr[i];
      }
      for (std::size_t i = 0; i < in_w; ++i) {
        nr[i] *= detail::activate_grad(params.arch.activation, prev_pre.at(r, i), in.at(r, i));
      }
    }
    delta = std::move(next);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Probabilities and pointwise losses

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - m);
    s += p[c];
  }
  for (auto& v : p) v /= s;
  return p;
}

inline Tensor softmax_rows(const Tensor& logits) {
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = softmax(logits.row(r));
    std::copy(row.begin(), row.end(), p.row(r).begin());
  }
  return p;
}

inline double clamp_prob(double p) { return std::max(p, kProbEps); }

/// -log(prob[label]) with the probability clamped at kProbEps.
inline double cross_entropy(std::span<const double> prob, std::size_t label) {
  if (label >= prob.size()) {
    throw InputError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                     std::to_string(prob.size()) + ")");
  }
  return -std::log(clamp_prob(prob[label]));
}

/// D_KL(p || q). Both operands are clamped at kProbEps inside the logarithm;
/// the weight is the raw p_c, so zero-mass classes contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("kl_divergence: length mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] == 0.0) continue;
    s += p[c] * std::log(clamp_prob(p[c]) / clamp_prob(q[c]));
  }
  return s;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Objectives and gradients

/// Scalar loss over a batch of logits plus its gradient w.r.t. those logits.
struct LossValue {
  double value = 0.0;
  Tensor dlogits;
};

using Objective = std::function<LossValue(const Tensor& logits)>;

/// Loss over a batch of probabilities and its gradient w.r.t. those probabilities.
struct ProbLoss {
  double value = 0.0;
  Tensor dprobs;
};

using ProbObjective = std::function<ProbLoss(const Tensor& probs)>;

/// Chain a probability-space gradient through the row-wise softmax Jacobian:
/// dz = p * (g - <p, g>).
inline Tensor softmax_backward(const Tensor& probs, const Tensor& dprobs) {
  Tensor dz(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto p = probs.row(r);
    const auto g = dprobs.row(r);
    const double dot = std::inner_product(p.begin(), p.end(), g.begin(), 0.0);
    auto out = dz.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (g[c] - dot);
  }
  return dz;
}

/// Lift a probability-space objective to a logit-space one.
inline Objective through_softmax(ProbObjective f) {
  return [f = std::move(f)](const Tensor& logits) {
    const Tensor probs = softmax_rows(logits);
    ProbLoss pl = f(probs);
    if (pl.dprobs.rows() != probs.rows() || pl.dprobs.cols() != probs.cols()) {
      throw ConfigError("objective gradient shape does not match the probability batch");
    }
    return LossValue{pl.value, softmax_backward(probs, pl.dprobs)};
  };
}

/// Sum of objectives evaluated on the same logits.
inline Objective sum_objectives(std::vector<std::pair<double, Objective>> terms) {
  return [terms = std::move(terms)](const Tensor& logits) {
    LossValue total{0.0, Tensor(logits.rows(), logits.cols())};
    for (const auto& [weight, term] : terms) {
      if (weight == 0.0) continue;
      LossValue v = term(logits);
      total.value += weight * v.value;
      for (std::size_t i = 0; i < total.dlogits.size(); ++i) total.dlogits.values[i] += weight * v.dlogits.values[i];
    }
    return total;
  };
}

/// Mean over rows of the squared error between logits and targets.
inline Objective squared_error(Tensor targets) {
  return [targets = std::move(targets)](const Tensor& logits) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
      throw ConfigError("squared_error: target shape mismatch");
    }
    LossValue out{0.0, Tensor(logits.rows(), logits.cols())};
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = logits.values[i] - targets.values[i];
      out.value += d * d * inv_n;
      out.dlogits.values[i] = 2.0 * d * inv_n;
    }
    return out;
  };
}

struct LossAndGrad {
  double value = 0.0;
  Gradients grads;
};

inline LossAndGrad loss_and_gradient(const NetworkParams& params, const Tensor& batch, const Objective& objective) {
  ForwardCache cache;
  const Tensor logits = forward(params, batch, &cache);
  LossValue lv = objective(logits);
  if (lv.dlogits.rows() != logits.rows() || lv.dlogits.cols() != logits.cols()) {
    throw ConfigError("objective returned a gradient with the wrong shape");
  }
  return {lv.value, backward(params, cache, lv.dlogits)};
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  double initial_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int decay_epoch = 150;
  double decay_factor = 0.1;
  Gradients velocity;

  double lr_at(int epoch) const { return epoch >= decay_epoch ? initial_lr * decay_factor : initial_lr; }
};

inline OptimizerState make_optimizer(const NetworkParams& params, double lr, double momentum, double weight_decay,
                                     int decay_epoch, double decay_factor = 0.1) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (decay_epoch < 1) throw ConfigError("decay epoch must be positive");
  if (!(decay_factor > 0.0)) throw ConfigError("decay factor must be positive");
  return {lr, momentum, weight_decay, decay_epoch, decay_factor, zeros_like(params)};
}

/// v <- momentum*v + g + wd*param; param <- param - lr(epoch)*v.
/// Layers whose `trainable` entry is false keep both parameters and velocity.
inline void sgd_step(NetworkParams& params, const Gradients& grads, OptimizerState& opt, int epoch,
                     const std::vector<bool>& trainable = {}) {
  if (grads.size() != params.layers.size() || opt.velocity.size() != params.layers.size()) {
    throw InputError("sgd_step: gradient/velocity layer count mismatch");
  }
  const double lr = opt.lr_at(epoch);
  auto update = [&](Tensor& p, const Tensor& g, Tensor& v) {
    if (p.size() != g.size() || p.size() != v.size()) throw InputError("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v.values[i] = opt.momentum * v.values[i] + g.values[i] + opt.weight_decay * p.values[i];
      p.values[i] -= lr * v.values[i];
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (!trainable.empty() && !trainable[l]) continue;
    update(params.layers[l].weight, grads[l].weight, opt.velocity[l].weight);
    update(params.layers[l].bias, grads[l].bias, opt.velocity[l].bias);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints (text, hex floats, bit-exact)

inline void save_checkpoint(std::ostream& os, const NetworkParams& params) {
  os << "acdu-network 1\n";
  os << "activation " << to_string(params.arch.activation) << "\n";
  os << "widths";
  for (auto w : params.arch.widths) os << ' ' << w;
  os << "\n";
  auto dump = [&os](const char* tag, std::size_t l, const Tensor& t) {
    os << tag << ' ' << l;
    for (double v : t.values) os << ' ' << textio::format_hex(v);
    os << "\n";
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    dump("weight", l, params.layers[l].weight);
    dump("bias", l, params.layers[l].bias);
  }
}

inline NetworkParams load_checkpoint(std::istream& is) {
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) throw IngestionError(std::string("checkpoint: missing ") + what);
    return std::istringstream(line);
  };
  {
    auto ss = next_line("header");
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != "acdu-network" || version != 1) throw IngestionError("checkpoint: bad header '" + line + "'");
  }
  NetworkParams params;
  {
    auto ss = next_line("activation");
    std::string key, value;
    ss >> key >> value;
    if (key != "activation") throw IngestionError("checkpoint: expected activation line");
    params.arch.activation = activation_from_string(value);
  }
  {
    auto ss = next_line("widths");
    std::string key;
    ss >> key;
    if (key != "widths") throw IngestionError("checkpoint: expected widths line");
    std::size_t w = 0;
    while (ss >> w) params.arch.widths.push_back(w);
    validate(params.arch);
  }
  auto read_tensor = [&](const char* tag, std::size_t l, std::size_t rows, std::size_t cols) {
    auto ss = next_line(tag);
    std::string key;
    std::size_t idx = 0;
    ss >> key >> idx;
    if (key != tag || idx != l) throw IngestionError("checkpoint: expected " + std::string(tag) + " " + std::to_string(l));
    Tensor t(rows, cols);
    std::string tok;
    for (auto& v : t.values) {
      if (!(ss >> tok)) throw IngestionError("checkpoint: too few values in " + std::string(tag) + " " + std::to_string(l));
      auto parsed = textio::parse_hex(tok);
      if (!parsed) throw IngestionError("checkpoint: bad value '" + tok + "'");
      v = *parsed;
    }
    if (ss >> tok) throw IngestionError("checkpoint: too many values in " + std::string(tag) + " " + std::to_string(l));
    return t;
  };
  for (std::size_t l = 0; l < params.arch.num_layers(); ++l) {
    const std::size_t in = params.arch.widths[l];
    const std::size_t out = params.arch.widths[l + 1];
    Layer layer;
    layer.weight = read_tensor("weight", l, out, in);
    layer.bias = read_tensor("bias", l, 1, out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Batch helpers

inline Tensor gather_rows(const Tensor& source, std::span<const std::size_t> indices) {
  Tensor out(indices.size(), source.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = source.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

/// Per-row cross-entropy of the network's predictions against hard labels.
inline std::vector<double> per_sample_losses(const NetworkParams& params, const Tensor& inputs,
                                             std::span<const std::size_t> labels) {
  const Tensor probs = softmax_rows(forward(params, inputs));
  std::vector<double> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = cross_entropy(probs.row(r), labels[r]);
  return out;
}

inline double accuracy(const NetworkParams& params, const Tensor& inputs, std::span<const std::size_t> labels) {
  if (inputs.rows() == 0) return 0.0;
  const Tensor logits = forward(params, inputs);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) correct += argmax(logits.row(r)) == labels[r];
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace acdu
