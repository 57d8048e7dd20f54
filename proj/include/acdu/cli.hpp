// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command implementations behind the acdu executable. Argument parsing lives
// in tools/acdu.cpp; everything here takes plain structs so it can be tested
// without a process boundary.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "acdu/config.hpp"
#include "acdu/datagen.hpp"
#include "acdu/driver.hpp"
#include "acdu/errors.hpp"
#include "acdu/oracle.hpp"
#include "acdu/textio.hpp"
#include "json.hpp"

namespace acdu::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

inline constexpr const char* kOutputRootEnv = "ACDU_OUTPUT_ROOT";

/// Relative output directories are placed under $ACDU_OUTPUT_ROOT when set.
inline fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline ordered_json matrix_json(const TransitionMatrix& m) {
  ordered_json rows = ordered_json::array();
  for (const auto& r : m.rows) rows.push_back(r);
  return rows;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << text;
}

// ---------------------------------------------------------------------------
// make-data

struct MakeDataArgs {
  std::size_t classes = 3;
  std::size_t n_per_class = 300;
  std::size_t n_test_per_class = 200;
  std::size_t dim = 8;
  double spread = 1.0;
  std::string noise = "symmetric";
  double eta = 0.4;
  std::vector<std::size_t> pair_map;
  std::uint64_t seed = 1;
  std::string out;
};

inline fs::path data_manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

/// Writes the dataset file and `<out>.manifest.json` with source and realized
/// transition matrices.
inline void cmd_make_data(const MakeDataArgs& a, std::ostream& log) {
  if (a.out.empty()) throw ConfigError("make-data: --out is required");
  RunConfig c;
  c.run.seed = a.seed;
  c.data.classes = a.classes;
  c.data.n_per_class = a.n_per_class;
  c.data.n_test_per_class = a.n_test_per_class;
  c.data.dim = a.dim;
  c.data.spread = a.spread;
  c.noise.kind = a.noise;
  c.noise.eta = a.eta;
  c.noise.pair_map = a.pair_map;
  c.method.t_unl = 0.05;
  validate(c);
  const Dataset ds = build_dataset(c);
  const fs::path out = resolve_output_dir(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(out.string(), ds);

  const auto emp = empirical_transition(ds);
  ordered_json m;
  m["format"] = "acdu-dataset-manifest 1";
  m["seed"] = a.seed;
  m["classes"] = a.classes;
  m["n_per_class"] = a.n_per_class;
  m["n_test_per_class"] = a.n_test_per_class;
  m["dim"] = a.dim;
  m["spread"] = a.spread;
  m["noise"] = {{"kind", a.noise}, {"eta", a.eta}, {"pair_map", c.noise.pair_map}};
  m["source_matrix"] = a.noise == "instance" ? ordered_json(nullptr) : matrix_json(noise_matrix(c.noise, a.classes));
  m["empirical_matrix"] = matrix_json(emp.matrix);
  m["empty_rows"] = emp.empty_rows;
  std::size_t noisy = 0;
  for (const auto& s : ds.samples) noisy += s.noisy();
  m["num_train"] = ds.ids(Split::train).size();
  m["num_noisy"] = noisy;
  write_text(data_manifest_path(out), m.dump(2) + "\n");
  log << "wrote " << out.string() << " (" << ds.size() << " samples, " << noisy << " noisy)\n";
}

// ---------------------------------------------------------------------------
// make-oracle

struct MakeOracleArgs {
  std::string data;
  std::string import_path;  // validate and canonicalize an external table instead
  double accuracy = 0.7;
  double confidence = 0.6;
  std::uint64_t seed = 1;
  std::string out;
};

inline void cmd_make_oracle(const MakeOracleArgs& a, std::ostream& log) {
  if (a.data.empty()) throw ConfigError("make-oracle: --data is required");
  if (a.out.empty()) throw ConfigError("make-oracle: --out is required");
  const Dataset ds = load_dataset(a.data);
  const OracleTable table = a.import_path.empty()
                                ? synthetic_oracle(ds, a.accuracy, a.confidence, derive_seed(a.seed, kOracleSeed))
                                : load_oracle_file(a.import_path, ds.size());
  if (table.num_classes() != ds.num_classes) throw IngestionError("oracle class count differs from the dataset");
  const fs::path out = resolve_output_dir(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_oracle(out.string(), table);
  std::size_t correct = 0;
  for (const auto& s : ds.samples) correct += table.at(s.id).predicted == s.true_label;
  log << "wrote " << out.string() << " (oracle accuracy " << textio::format_fixed(double(correct) / ds.size(), 4)
      << ")\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;  // empty: built-in desk defaults
  std::vector<std::string> overrides;
};

inline RunConfig load_run_config(const TrainArgs& a) {
  RunConfig c;
  if (!a.config.empty()) {
    std::ifstream is(a.config);
    if (!is) throw ConfigError("cannot open config file " + a.config);
    c = parse_config(is);
  } else {
    c = desk_config();
  }
  for (const auto& o : a.overrides) apply_override(c, o);
  validate(c);
  return c;
}

inline ordered_json run_manifest(const RunConfig& c, const std::string& status) {
  ordered_json m;
  m["format"] = "acdu-run-manifest 1";
  m["status"] = status;
  m["seed"] = c.run.seed;
  m["config_hash"] = hex64(config_hash(c));
  m["config"] = to_ini(c);
  m["files"] = {"metrics.csv", "forgetting.csv", "codivide.csv", "net_A.ckpt", "net_V.ckpt"};
  return m;
}

struct TrainOutcome {
  fs::path run_dir;
  Summary a;
  Summary v;
};

inline TrainOutcome cmd_train(const TrainArgs& a, std::ostream& log) {
  const RunConfig c = load_run_config(a);
  const fs::path dir = resolve_output_dir(c.run.output_dir);
  fs::create_directories(dir);
  write_text(dir / "manifest.json", run_manifest(c, "running").dump(2) + "\n");
  const Experiment e = prepare(c);
  FileObserver obs(dir, c.run.audits, &log);
  obs.set_tau(c.method.tau_w);
  const RunResult r = run(e, &obs);
  save_checkpoint_file(dir / "net_A.ckpt", r.a);
  save_checkpoint_file(dir / "net_V.ckpt", r.v);
  write_text(dir / "manifest.json", run_manifest(c, "complete").dump(2) + "\n");
  TrainOutcome out{dir, r.metrics.summary_a(), r.metrics.summary_v()};
  log << "run " << dir.string() << " config " << hex64(config_hash(c)) << '\n'
      << "net A: best " << textio::format_fixed(out.a.best, 4) << " last " << textio::format_fixed(out.a.last, 4) << '\n'
      << "net V: best " << textio::format_fixed(out.v.best, 4) << " last " << textio::format_fixed(out.v.last, 4) << '\n';
  return out;
}

// ---------------------------------------------------------------------------
// report

inline std::int64_t cell_int(const std::string& cell) {
  if (auto v = textio::parse_int(cell)) return *v;
  throw IngestionError("expected an integer, got '" + cell + "'");
}

inline double cell_double(const std::string& cell) {
  if (auto v = textio::parse_double(cell)) return *v;
  throw IngestionError("expected a number, got '" + cell + "'");
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto sv : textio::split(line, ',')) cells.emplace_back(sv);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::vector<EpochMetrics> read_metrics_csv(const fs::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0].size() != 11 || rows[0][0] != "epoch") {
    throw IngestionError(path.string() + ": missing metrics header");
  }
  std::vector<EpochMetrics> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 11) throw IngestionError(path.string() + " line " + std::to_string(i + 1) + ": expected 11 cells");
    EpochMetrics m;
    m.epoch = static_cast<int>(cell_int(r[0]));
    m.acc_a = cell_double(r[1]);
    m.acc_v = cell_double(r[2]);
    m.loss_a = cell_double(r[3]);
    m.loss_v = cell_double(r[4]);
    m.du_a = static_cast<std::size_t>(cell_int(r[5]));
    m.du_v = static_cast<std::size_t>(cell_int(r[6]));
    m.dt = static_cast<std::size_t>(cell_int(r[7]));
    m.hn = static_cast<std::size_t>(cell_int(r[8]));
    m.ln = static_cast<std::size_t>(cell_int(r[9]));
    m.cs = static_cast<std::size_t>(cell_int(r[10]));
    out.push_back(m);
  }
  return out;
}

struct CodivideRow {
  int epoch = 0;
  std::size_t id = 0;
  double w_a = 0.0;
  double w_v = 0.0;
  std::size_t observed = 0;
  std::size_t truth = 0;
};

inline std::vector<CodivideRow> read_codivide_csv(const fs::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0].size() != 8 || rows[0][0] != "epoch") {
    throw IngestionError(path.string() + ": missing codivide header");
  }
  std::vector<CodivideRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 8) throw IngestionError(path.string() + " line " + std::to_string(i + 1) + ": expected 8 cells");
    out.push_back({static_cast<int>(cell_int(r[0])), static_cast<std::size_t>(cell_int(r[1])),
                   cell_double(r[2]), cell_double(r[3]),
                   static_cast<std::size_t>(cell_int(r[6])), static_cast<std::size_t>(cell_int(r[7]))});
  }
  return out;
}

struct Tally {
  std::size_t hn = 0;
  std::size_t ln = 0;
  std::size_t cs = 0;
  friend bool operator==(const Tally&, const Tally&) = default;
};

/// Over epochs [first, last]: a noisy sample is HN if both networks gave it
/// w >= tau in the same epoch at least once, LN otherwise; clean samples are CS.
inline Tally tally_window(const std::vector<CodivideRow>& rows, int first, int last, double tau = 0.5) {
  std::map<std::size_t, std::pair<bool, bool>> seen;  // id -> (noisy, judged clean)
  for (const auto& r : rows) {
    if (r.epoch < first || r.epoch > last) continue;
    auto& s = seen[r.id];
    s.first = r.observed != r.truth;
    s.second = s.second || (r.w_a >= tau && r.w_v >= tau);
  }
  Tally t;
  for (const auto& [id, s] : seen) {
    if (!s.first) ++t.cs;
    else if (s.second) ++t.hn;
    else ++t.ln;
  }
  return t;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
  int window_first = -1;  // -1: E_warmup + 1 from the run's config
  int window_last = -1;   // -1: E_start
};

struct LoadedRun {
  std::string id;
  fs::path dir;
  RunConfig config;
  std::vector<EpochMetrics> metrics;
};

/// Returns an empty string when the run is usable, otherwise the reason.
inline std::string load_run(const fs::path& dir, LoadedRun& out) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) return "no manifest.json";
  ordered_json m;
  try {
    std::ifstream is(manifest_path);
    m = ordered_json::parse(is);
  } catch (const std::exception& e) {
    return std::string("unreadable manifest: ") + e.what();
  }
  if (m.value("status", "") != "complete") return "run did not complete";
  try {
    out.config = parse_config_string(m.at("config").get<std::string>());
    out.metrics = read_metrics_csv(dir / "metrics.csv");
  } catch (const std::exception& e) {
    return e.what();
  }
  if (static_cast<int>(out.metrics.size()) != out.config.schedule.max_epoch) return "metrics.csv is truncated";
  out.dir = dir;
  out.id = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  return {};
}

/// Writes curves.csv, summary.csv and tallies.csv. Returns the number of runs reported.
inline std::size_t cmd_report(const ReportArgs& a, std::ostream& log) {
  if (a.runs.empty()) throw ConfigError("report: at least one run directory is required");
  if (a.out.empty()) throw ConfigError("report: --out is required");
  std::vector<LoadedRun> runs;
  std::set<std::string> ids;
  for (const auto& r : a.runs) {
    LoadedRun lr;
    if (auto why = load_run(r, lr); !why.empty()) {
      log << "warning: skipping " << r << ": " << why << '\n';
      continue;
    }
    std::string id = lr.id;
    for (int k = 2; ids.count(id); ++k) id = lr.id + "#" + std::to_string(k);
    lr.id = id;
    ids.insert(id);
    runs.push_back(std::move(lr));
  }
  if (runs.empty()) throw IngestionError("report: no complete run directories");

  const fs::path out = resolve_output_dir(a.out);
  fs::create_directories(out);
  std::ofstream curves(out / "curves.csv", std::ios::binary);
  std::ofstream summary(out / "summary.csv", std::ios::binary);
  std::ofstream tallies(out / "tallies.csv", std::ios::binary);
  if (!curves || !summary || !tallies) throw IngestionError("report: cannot write into " + out.string());
  curves << "epoch,run_id,acc_A,acc_V\n";
  summary << "run_id,config_hash,best_A,last_A,best_V,last_V\n";
  tallies << "run_id,window_first,window_last,HN,LN,CS\n";
  for (const auto& r : runs) {
    RunMetrics rm{r.metrics};
    for (const auto& m : r.metrics) {
      curves << m.epoch << ',' << r.id << ',' << textio::format_double(m.acc_a) << ','
             << textio::format_double(m.acc_v) << '\n';
    }
    const auto sa = rm.summary_a();
    const auto sv = rm.summary_v();
    summary << r.id << ',' << hex64(config_hash(r.config)) << ',' << textio::format_double(sa.best) << ','
            << textio::format_double(sa.last) << ',' << textio::format_double(sv.best) << ','
            << textio::format_double(sv.last) << '\n';
    const int first = a.window_first >= 0 ? a.window_first : r.config.schedule.warmup + 1;
    const int last = a.window_last >= 0 ? a.window_last : r.config.schedule.start;
    if (!fs::exists(r.dir / "codivide.csv")) {
      log << "warning: " << r.id << " has no codivide.csv; tallies omitted\n";
      continue;
    }
    const auto t = tally_window(read_codivide_csv(r.dir / "codivide.csv"), first, last, r.config.method.tau_w);
    tallies << r.id << ',' << first << ',' << last << ',' << t.hn << ',' << t.ln << ',' << t.cs << '\n';
  }
  log << "reported " << runs.size() << " run(s) into " << out.string() << '\n';
  return runs.size();
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string config;
  std::string param;  // dotted key; empty sweeps seeds only
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::string> overrides;
  std::string executable = "/proc/self/exe";
};

struct SweepJob {
  std::vector<std::string> overrides;
  std::string output_dir;
};

inline std::vector<SweepJob> plan_sweep(const SweepArgs& a) {
  const RunConfig base = load_run_config({a.config, a.overrides});
  std::vector<std::string> values = a.values;
  if (a.param.empty()) values = {""};
  else if (values.empty()) throw ConfigError("sweep: --values is required with --param");
  std::vector<SweepJob> jobs;
  for (const auto& v : values) {
    for (auto seed : a.seeds) {
      SweepJob j;
      j.overrides = a.overrides;
      fs::path dir(base.run.output_dir);
      if (!a.param.empty()) {
        j.overrides.push_back(a.param + "=" + v);
        dir /= a.param + "=" + v;
      }
      dir /= "seed=" + std::to_string(seed);
      j.overrides.push_back("run.seed=" + std::to_string(seed));
      j.overrides.push_back("run.output_dir=" + dir.string());
      j.output_dir = dir.string();
      RunConfig probe = base;
      for (const auto& o : j.overrides) apply_override(probe, o);
      validate(probe);
      jobs.push_back(std::move(j));
    }
  }
  return jobs;
}

/// One child process per job, run in sequence. Returns the number of failed jobs.
inline std::size_t cmd_sweep(const SweepArgs& a, std::ostream& log) {
  const auto jobs = plan_sweep(a);
  std::size_t failed = 0;
  for (const auto& j : jobs) {
    std::vector<std::string> argv{a.executable, "train"};
    if (!a.config.empty()) {
      argv.push_back("--config");
      argv.push_back(a.config);
    }
    for (const auto& o : j.overrides) {
      argv.push_back("--override");
      argv.push_back(o);
    }
    std::vector<char*> cargv;
    for (auto& s : argv) cargv.push_back(s.data());
    cargv.push_back(nullptr);
    log << "sweep: " << j.output_dir << '\n' << std::flush;
    const pid_t pid = fork();
    if (pid < 0) throw StateError("sweep: fork failed");
    if (pid == 0) {
      execv(cargv[0], cargv.data());
      _exit(127);
    }
    int status = 0;
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      ++failed;
      log << "sweep: job " << j.output_dir << " failed\n";
    }
  }
  log << "sweep: " << jobs.size() - failed << " of " << jobs.size() << " jobs completed\n";
  return failed;
}

}  // namespace acdu::cli
