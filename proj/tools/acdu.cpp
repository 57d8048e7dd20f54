// SPDX-License-Identifier: Apache-2.0
// acdu: dataset, oracle, training, report and sweep commands.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acdu/cli.hpp"

namespace {

int fail(const char* kind, const std::exception& e, int code) {
  std::cerr << "acdu: " << kind << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace acdu;
  CLI::App app{"Noisy-label training with asymmetric co-teaching and selective unlearning"};
  app.require_subcommand(1);

  cli::MakeDataArgs data;
  auto* make_data = app.add_subcommand("make-data", "Generate a Gaussian-blob dataset with injected label noise");
  make_data->add_option("--classes", data.classes, "Number of classes")->capture_default_str();
  make_data->add_option("--n-per-class", data.n_per_class, "Train samples per class")->capture_default_str();
  make_data->add_option("--n-test-per-class", data.n_test_per_class, "Test samples per class")->capture_default_str();
  make_data->add_option("--dim", data.dim, "Feature dimension")->capture_default_str();
  make_data->add_option("--spread", data.spread, "Within-class standard deviation")->capture_default_str();
  make_data->add_option("--noise", data.noise, "none|symmetric|asymmetric|instance")->capture_default_str();
  make_data->add_option("--eta", data.eta, "Noise rate")->capture_default_str();
  make_data->add_option("--pair-map", data.pair_map, "Asymmetric flip target per class")->delimiter(',');
  make_data->add_option("--seed", data.seed, "Seed")->capture_default_str();
  make_data->add_option("--out", data.out, "Output dataset file")->required();

  cli::MakeOracleArgs oracle;
  auto* make_oracle = app.add_subcommand("make-oracle", "Generate or import zero-shot oracle predictions");
  make_oracle->add_option("--data", oracle.data, "Dataset file")->required();
  make_oracle->add_option("--import", oracle.import_path, "Validate an existing oracle file instead of generating");
  make_oracle->add_option("--accuracy", oracle.accuracy, "Synthetic oracle accuracy")->capture_default_str();
  make_oracle->add_option("--confidence", oracle.confidence, "Probability on the predicted class")
      ->capture_default_str();
  make_oracle->add_option("--seed", oracle.seed, "Seed")->capture_default_str();
  make_oracle->add_option("--out", oracle.out, "Output oracle file")->required();

  cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run one training job");
  train_cmd->add_option("--config", train.config, "INI config file (defaults apply when omitted)");
  train_cmd->add_option("--override", train.overrides, "section.key=value, repeatable")->take_all();

  cli::ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Summarize run directories into plot-ready CSV");
  report_cmd->add_option("runs", report.runs, "Run directories")->required();
  report_cmd->add_option("--out", report.out, "Report directory")->required();
  report_cmd->add_option("--window-first", report.window_first, "First epoch of the HN/LN/CS window");
  report_cmd->add_option("--window-last", report.window_last, "Last epoch of the HN/LN/CS window");

  cli::SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Launch one training process per value and seed");
  sweep_cmd->add_option("--config", sweep.config, "Base INI config");
  sweep_cmd->add_option("--param", sweep.param, "Dotted key to sweep");
  sweep_cmd->add_option("--values", sweep.values, "Values for --param")->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep.seeds, "Seeds")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--override", sweep.overrides, "Fixed overrides applied to every job")->take_all();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_data) cli::cmd_make_data(data, std::cout);
    if (*make_oracle) cli::cmd_make_oracle(oracle, std::cout);
    if (*train_cmd) cli::cmd_train(train, std::cout);
    if (*report_cmd) cli::cmd_report(report, std::cerr);
    if (*sweep_cmd) return cli::cmd_sweep(sweep, std::cout) == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    return fail("config error", e, 2);
  } catch (const IngestionError& e) {
    return fail("input error", e, 3);
  } catch (const NumericalError& e) {
    return fail("numerical error", e, 4);
  } catch (const std::exception& e) {
    return fail("error", e, 1);
  }
  return 0;
}
