// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: INI-style sections of key = value pairs. Every key is
// known up front; unknown keys and malformed values are rejected with the
// offending field named.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "acdu/errors.hpp"
#include "acdu/textio.hpp"

namespace acdu {

struct DataSpec {
  std::string source = "blobs";  // blobs | file
  std::string path;
  std::size_t classes = 3;
  std::size_t n_per_class = 300;
  std::size_t n_test_per_class = 200;
  std::size_t dim = 8;
  double spread = 1.0;
};

struct NoiseSpec {
  std::string kind = "symmetric";  // none | symmetric | asymmetric | instance
  double eta = 0.4;
  std::vector<std::size_t> pair_map;  // empty: i -> (i+1) mod C
};

struct OracleSpec {
  std::string source = "synthetic";  // synthetic | file
  std::string path;
  double accuracy = 0.7;
  double confidence = 0.6;
  std::size_t embedding_dim = 16;
  double embedding_gain = 3.0;
};

struct ModelSpec {
  std::vector<std::size_t> a_hidden{64, 64};
  std::size_t v_adapter = 32;
  std::vector<std::size_t> v_head{32};
  std::string activation = "relu";
};

struct OptimSpec {
  double lr_a = 0.02;
  double lr_v = 0.002;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int decay_epoch = 60;
  std::size_t batch_size = 64;
};

struct ScheduleSpec {
  int max_epoch = 120;
  int warmup = 5;
  int start = 30;
  int encoder = 25;
  int update_period = 10;    // E_UP
  int unlearn_duration = 5;  // E_UD
};

struct MethodSpec {
  std::string mode = "acdu";  // acdu | naive
  bool unlearning = true;
  bool acd = true;             // false: V also trains on its unlabeled split
  bool single_network = false;  // A divides on its own GMM, V unused
  bool low_loss = true;
  bool loss_drop = true;
  bool clip_filter = true;
  double p_low = 0.05;
  double p_drop = 0.2;
  std::optional<double> t_unl;
  std::size_t unlearn_batch = 64;
  double tau_w = 0.5;
  double lambda_u = 1.0;
  double t_sharp = 0.5;
  double mixup_alpha = 4.0;
  double reg_weight = 1.0;
};

struct RunSpec {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  bool audits = true;
};

struct RunConfig {
  RunSpec run;
  DataSpec data;
  NoiseSpec noise;
  OracleSpec oracle;
  ModelSpec model;
  OptimSpec optim;
  ScheduleSpec schedule;
  MethodSpec method;
};

/// Desk-scale defaults with T_unl set, for programmatic use.
inline RunConfig desk_config() {
  RunConfig c;
  c.method.t_unl = 0.05;
  return c;
}

namespace detail {

struct ConfigField {
  std::string name;  // section.key
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

[[noreturn]] inline void bad_value(const std::string& field, std::string_view value, const char* expected) {
  throw ConfigError("field '" + field + "': expected " + expected + ", got '" + std::string(value) + "'");
}

inline ConfigField string_field(std::string name, std::string& ref) {
  return {name, [&ref](std::string_view v) { ref = std::string(textio::trim(v)); }, [&ref] { return ref; }};
}

inline ConfigField real_field(std::string name, double& ref) {
  return {name,
          [&ref, name](std::string_view v) {
            auto d = textio::parse_double(v);
            if (!d) bad_value(name, v, "a number");
            ref = *d;
          },
          [&ref] { return textio::format_double(ref); }};
}

inline ConfigField optional_real_field(std::string name, std::optional<double>& ref) {
  return {name,
          [&ref, name](std::string_view v) {
            auto d = textio::parse_double(v);
            if (!d) bad_value(name, v, "a number");
            ref = *d;
          },
          [&ref] { return ref ? textio::format_double(*ref) : std::string(); }};
}

template <typename Int>
ConfigField int_field(std::string name, Int& ref) {
  return {name,
          [&ref, name](std::string_view v) {
            auto i = textio::parse_int(v);
            if (!i || (std::is_unsigned_v<Int> && *i < 0)) bad_value(name, v, "an integer");
            ref = static_cast<Int>(*i);
          },
          [&ref] { return std::to_string(ref); }};
}

inline ConfigField bool_field(std::string name, bool& ref) {
  return {name,
          [&ref, name](std::string_view v) {
            const auto t = textio::trim(v);
            if (t == "true" || t == "1" || t == "yes") ref = true;
            else if (t == "false" || t == "0" || t == "no") ref = false;
            else bad_value(name, v, "true or false");
          },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline ConfigField list_field(std::string name, std::vector<std::size_t>& ref) {
  return {name,
          [&ref, name](std::string_view v) {
            ref.clear();
            const auto t = textio::trim(v);
            if (t.empty()) return;
            for (auto part : textio::split(t, ',')) {
              auto i = textio::parse_int(part);
              if (!i || *i < 0) bad_value(name, v, "a comma-separated list of non-negative integers");
              ref.push_back(static_cast<std::size_t>(*i));
            }
          },
          [&ref] {
            std::string s;
            for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + std::to_string(ref[i]);
            return s;
          }};
}

inline std::vector<ConfigField> fields(RunConfig& c) {
  return {
      int_field("run.seed", c.run.seed),
      string_field("run.output_dir", c.run.output_dir),
      bool_field("run.audits", c.run.audits),

      string_field("data.source", c.data.source),
      string_field("data.path", c.data.path),
      int_field("data.classes", c.data.classes),
      int_field("data.n_per_class", c.data.n_per_class),
      int_field("data.n_test_per_class", c.data.n_test_per_class),
      int_field("data.dim", c.data.dim),
      real_field("data.spread", c.data.spread),

      string_field("noise.kind", c.noise.kind),
      real_field("noise.eta", c.noise.eta),
      list_field("noise.pair_map", c.noise.pair_map),

      string_field("oracle.source", c.oracle.source),
      string_field("oracle.path", c.oracle.path),
      real_field("oracle.accuracy", c.oracle.accuracy),
      real_field("oracle.confidence", c.oracle.confidence),
      int_field("oracle.embedding_dim", c.oracle.embedding_dim),
      real_field("oracle.embedding_gain", c.oracle.embedding_gain),

      list_field("model.a_hidden", c.model.a_hidden),
      int_field("model.v_adapter", c.model.v_adapter),
      list_field("model.v_head", c.model.v_head),
      string_field("model.activation", c.model.activation),

      real_field("optim.lr_a", c.optim.lr_a),
      real_field("optim.lr_v", c.optim.lr_v),
      real_field("optim.momentum", c.optim.momentum),
      real_field("optim.weight_decay", c.optim.weight_decay),
      int_field("optim.decay_epoch", c.optim.decay_epoch),
      int_field("optim.batch_size", c.optim.batch_size),

      int_field("schedule.max_epoch", c.schedule.max_epoch),
      int_field("schedule.warmup", c.schedule.warmup),
      int_field("schedule.start", c.schedule.start),
      int_field("schedule.encoder", c.schedule.encoder),
      int_field("schedule.update_period", c.schedule.update_period),
      int_field("schedule.unlearn_duration", c.schedule.unlearn_duration),

      string_field("method.mode", c.method.mode),
      bool_field("method.unlearning", c.method.unlearning),
      bool_field("method.acd", c.method.acd),
      bool_field("method.single_network", c.method.single_network),
      bool_field("method.low_loss", c.method.low_loss),
      bool_field("method.loss_drop", c.method.loss_drop),
      bool_field("method.clip_filter", c.method.clip_filter),
      real_field("method.p_low", c.method.p_low),
      real_field("method.p_drop", c.method.p_drop),
      optional_real_field("method.t_unl", c.method.t_unl),
      int_field("method.unlearn_batch", c.method.unlearn_batch),
      real_field("method.tau_w", c.method.tau_w),
      real_field("method.lambda_u", c.method.lambda_u),
      real_field("method.t_sharp", c.method.t_sharp),
      real_field("method.mixup_alpha", c.method.mixup_alpha),
      real_field("method.reg_weight", c.method.reg_weight),
  };
}

}  // namespace detail

/// Set one field by its dotted name.
inline void set_field(RunConfig& c, std::string_view name, std::string_view value) {
  for (auto& f : detail::fields(c)) {
    if (f.name == name) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(name) + "'");
}

/// Apply a "section.key=value" override.
inline void apply_override(RunConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  auto key = textio::trim(assignment.substr(0, eq));
  const auto value = assignment.substr(eq + 1);
  if (key == "no_unlearning" || key == "no_acd") {
    // Negated ablation spellings.
    RunConfig probe;
    set_field(probe, "method.unlearning", value);
    set_field(c, key == "no_unlearning" ? "method.unlearning" : "method.acd", probe.method.unlearning ? "false" : "true");
    return;
  }
  if (key == "seed") key = "run.seed";
  set_field(c, key, value);
}

/// Collects every validation problem; throws ConfigError listing all of them.
inline void validate(const RunConfig& c) {
  std::vector<std::string> errors;
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  require(c.data.source == "blobs" || c.data.source == "file", "data.source: must be 'blobs' or 'file'");
  if (c.data.source == "file") require(!c.data.path.empty(), "data.path: required when data.source = file");
  if (c.data.source == "blobs") {
    require(c.data.classes >= 2, "data.classes: must be >= 2");
    require(c.data.n_per_class >= 1, "data.n_per_class: must be >= 1");
    require(c.data.dim >= 1, "data.dim: must be >= 1");
    require(c.data.spread > 0.0, "data.spread: must be positive");
    require(c.noise.kind == "none" || c.noise.kind == "symmetric" || c.noise.kind == "asymmetric" ||
                c.noise.kind == "instance",
            "noise.kind: must be none, symmetric, asymmetric or instance");
    require(c.noise.eta >= 0.0 && c.noise.eta < 1.0, "noise.eta: must be in [0, 1)");
    require(c.noise.pair_map.empty() || c.noise.pair_map.size() == c.data.classes,
            "noise.pair_map: must list one target per class");
  }
  require(c.oracle.source == "synthetic" || c.oracle.source == "file", "oracle.source: must be 'synthetic' or 'file'");
  if (c.oracle.source == "file") require(!c.oracle.path.empty(), "oracle.path: required when oracle.source = file");
  require(c.oracle.accuracy >= 0.0 && c.oracle.accuracy <= 1.0, "oracle.accuracy: must be in [1/C, 1]");
  require(c.oracle.confidence > 0.0 && c.oracle.confidence < 1.0, "oracle.confidence: must be in (1/C, 1)");
  require(c.model.activation == "relu" || c.model.activation == "tanh", "model.activation: must be relu or tanh");
  require(c.model.v_adapter >= 1, "model.v_adapter: must be >= 1");
  require(c.optim.lr_a > 0.0, "optim.lr_a: must be positive");
  require(c.optim.lr_v > 0.0, "optim.lr_v: must be positive");
  require(c.optim.momentum >= 0.0 && c.optim.momentum < 1.0, "optim.momentum: must be in [0, 1)");
  require(c.optim.weight_decay >= 0.0, "optim.weight_decay: must be non-negative");
  require(c.optim.decay_epoch >= 1, "optim.decay_epoch: must be positive");
  require(c.optim.batch_size >= 1, "optim.batch_size: must be >= 1");

  const auto& s = c.schedule;
  require(s.max_epoch >= 1, "schedule.max_epoch: must be positive");
  require(s.warmup >= 0, "schedule.warmup: must be non-negative");
  require(s.update_period >= 1, "schedule.update_period: must be positive");
  require(s.unlearn_duration >= 0, "schedule.unlearn_duration: must be non-negative");
  require(s.encoder >= 0, "schedule.encoder: must be non-negative");
  require(s.warmup < s.max_epoch, "schedule.warmup: must be < schedule.max_epoch");
  require(s.warmup < s.start, "schedule.start: must be > schedule.warmup");
  require(s.unlearn_duration < s.update_period, "schedule.unlearn_duration: must be < schedule.update_period");

  const auto& m = c.method;
  require(m.mode == "acdu" || m.mode == "naive", "method.mode: must be 'acdu' or 'naive'");
  require(m.p_low >= 0.0 && m.p_low <= 1.0, "method.p_low: must be in [0, 1]");
  require(m.p_drop >= 0.0 && m.p_drop <= 1.0, "method.p_drop: must be in [0, 1]");
  if (m.mode == "acdu" && m.unlearning) {
    require(m.t_unl.has_value(), "method.t_unl: required when method.unlearning = true");
    if (m.t_unl) require(*m.t_unl > 0.0, "method.t_unl: must be positive");
  }
  require(m.unlearn_batch >= 1, "method.unlearn_batch: must be >= 1");
  require(m.tau_w >= 0.0 && m.tau_w <= 1.0, "method.tau_w: must be in [0, 1]");
  require(m.lambda_u >= 0.0, "method.lambda_u: must be non-negative");
  require(m.t_sharp > 0.0, "method.t_sharp: must be positive");
  require(m.mixup_alpha > 0.0, "method.mixup_alpha: must be positive");
  require(m.reg_weight >= 0.0, "method.reg_weight: must be non-negative");
  require(!(m.single_network && !m.acd), "method.single_network: cannot be combined with method.acd = false");

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

/// Parse INI text on top of the defaults. T_unl has no default here, so
/// unlearning configs must set it explicitly.
inline RunConfig parse_config(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  std::vector<std::string> unknown;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      if (!body.data().empty()) unknown.push_back(section + " (keys must live inside a [section])");
      continue;
    }
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      try {
        set_field(c, name, value.data());
      } catch (const ConfigError& e) {
        if (std::string_view(e.what()).starts_with("unknown config key")) unknown.push_back(name);
        else throw;
      }
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& u : unknown) msg += " " + u;
    throw ConfigError(msg);
  }
  return c;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

/// Canonical INI rendering; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  std::string current;
  for (const auto& f : detail::fields(copy)) {
    const auto dot = f.name.find('.');
    const auto section = f.name.substr(0, dot);
    const auto value = f.get();
    if (section != current) {
      out += (current.empty() ? "" : "\n") + std::string("[") + section + "]\n";
      current = section;
    }
    if (value.empty() && f.name == "method.t_unl") continue;
    out += f.name.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

inline std::uint64_t config_hash(const RunConfig& c) { return textio::fnv1a64(to_ini(c)); }

}  // namespace acdu
