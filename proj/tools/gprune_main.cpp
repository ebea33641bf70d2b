/* Copyright 2026 The gprune Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gprune/cli.hpp"

namespace {

using namespace gprune;

struct CommonFlags {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
};

/// Loads the config and folds in the command-line overrides; --seed and
/// --out, when given, win over the config file.
RunConfig resolve_config(const CLI::App* sub, const CommonFlags& flags) {
  RunConfig cfg = load_run_config(flags.config_path, flags.overrides);
  const CLI::Option* seed = sub->get_option_no_throw("--seed");
  if (seed != nullptr && seed->count() > 0) cfg.seed = flags.seed;
  const CLI::Option* out = sub->get_option_no_throw("--out");
  if (out != nullptr && out->count() > 0) cfg.out_dir = flags.out_dir;
  return cfg;
}

std::string fmt_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void print_train_outcome(const TrainOutcome& out) {
  if (!out.warning.empty()) std::cerr << "warning: " << out.warning << "\n";
  const TrainMonitor& mon = out.checkpoint.meta.monitor;
  std::cout << "stage: " << out.checkpoint.meta.stage << "\n"
            << "steps: " << out.result.steps << "\n";
  if (!mon.history.empty()) {
    const EpochStats& last = mon.history.back();
    std::cout << "final loss: " << fmt_g6(last.loss) << "\n"
              << "final sparsity: " << fmt_g6(last.sparsity_fraction) << "\n";
  }
  if (out.result.hit_plateau) std::cout << "stopped on plateau\n";
  std::cout << "wrote " << out.checkpoint_path << "\n"
            << "wrote " << out.monitor_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "gprune: train, sparsify, prune, and fine-tune small batch-normalized "
      "CNNs"};
  app.require_subcommand(1);
  argv = app.ensure_utf8(argv);

  CommonFlags train_f, prune_f, finetune_f, eval_f, inspect_f;

  CLI::App* train_cmd = app.add_subcommand(
      "train", "Baseline or sparsified training from a preset or checkpoint");
  train_cmd->add_option("--config", train_f.config_path, "Run config (JSON)")
      ->required();
  train_cmd->add_option("--checkpoint", train_f.checkpoint_path,
                        "Starting weights (omit to initialize from scratch)");
  train_cmd->add_option("--out", train_f.out_dir, "Output directory");
  train_cmd->add_option("--seed", train_f.seed, "Seed override");
  train_cmd->add_option("--override", train_f.overrides,
                        "Config override KEY=VALUE (repeatable)");

  CLI::App* prune_cmd = app.add_subcommand(
      "prune", "Remove constant channels and undo the gamma rescale");
  prune_cmd
      ->add_option("--checkpoint", prune_f.checkpoint_path,
                   "Checkpoint to prune")
      ->required();
  prune_cmd->add_option("--out", prune_f.out_dir, "Output directory")
      ->required();

  CLI::App* finetune_cmd = app.add_subcommand(
      "finetune", "Plain-SGD recovery pass on a pruned checkpoint");
  finetune_cmd
      ->add_option("--config", finetune_f.config_path, "Run config (JSON)")
      ->required();
  finetune_cmd
      ->add_option("--checkpoint", finetune_f.checkpoint_path,
                   "Checkpoint to fine-tune")
      ->required();
  finetune_cmd->add_option("--out", finetune_f.out_dir, "Output directory");
  finetune_cmd->add_option("--seed", finetune_f.seed, "Seed override");
  finetune_cmd->add_option("--override", finetune_f.overrides,
                           "Config override KEY=VALUE (repeatable)");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Top-1 accuracy and model size on the test "
                                 "split");
  eval_cmd->add_option("--config", eval_f.config_path, "Run config (JSON)")
      ->required();
  eval_cmd
      ->add_option("--checkpoint", eval_f.checkpoint_path,
                   "Checkpoint to evaluate")
      ->required();
  eval_cmd->add_option("--out", eval_f.out_dir,
                       "Directory for metrics.csv (omit to print only)");
  eval_cmd->add_option("--override", eval_f.overrides,
                       "Config override KEY=VALUE (repeatable)");

  CLI::App* inspect_cmd = app.add_subcommand(
      "inspect", "Gamma histograms, penalty weights, and tuning warnings");
  inspect_cmd
      ->add_option("--checkpoint", inspect_f.checkpoint_path,
                   "Checkpoint to inspect")
      ->required();
  inspect_cmd->add_option("--out", inspect_f.out_dir,
                          "Directory for inspect.txt (omit to print only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) {
      const RunConfig cfg = resolve_config(train_cmd, train_f);
      print_train_outcome(
          cmd_train(cfg, cfg.out_dir, train_f.checkpoint_path));
    } else if (prune_cmd->parsed()) {
      const PruneOutcome out =
          cmd_prune(prune_f.checkpoint_path, prune_f.out_dir);
      if (!out.warning.empty())
        std::cerr << "warning: " << out.warning << "\n";
      std::cout << "params: " << out.report.params_before << " -> "
                << out.report.params_after << " ("
                << fmt_g6(100.0 * out.report.param_ratio()) << "% kept)\n"
                << "flops: " << out.report.flops_before << " -> "
                << out.report.flops_after << "\n";
      for (const PruneReport::Row& row : out.report.rows)
        std::cout << "layer " << row.layer_id << " (" << row.name << "): "
                  << row.kept << "/" << row.total << " channels kept\n";
      std::cout << (out.report.requires_finetune
                        ? "padding approximation touched the borders; "
                          "fine-tuning recommended\n"
                        : "rewrite is exact; fine-tuning optional\n");
      std::cout << "wrote " << out.checkpoint_path << "\n"
                << "wrote " << out.report_path << "\n";
    } else if (finetune_cmd->parsed()) {
      const RunConfig cfg = resolve_config(finetune_cmd, finetune_f);
      print_train_outcome(
          cmd_finetune(finetune_f.checkpoint_path, cfg, cfg.out_dir));
    } else if (eval_cmd->parsed()) {
      const RunConfig cfg = resolve_config(eval_cmd, eval_f);
      const EvalMetrics m =
          cmd_eval(eval_f.checkpoint_path, cfg,
                   eval_cmd->count("--out") > 0 ? eval_f.out_dir : "");
      std::cout << m.to_csv();
    } else if (inspect_cmd->parsed()) {
      const std::string report = cmd_inspect(inspect_f.checkpoint_path);
      std::cout << report;
      if (inspect_cmd->count("--out") > 0) {
        std::error_code ec;
        std::filesystem::create_directories(inspect_f.out_dir, ec);
        std::ofstream out(std::filesystem::path(inspect_f.out_dir) /
                          "inspect.txt");
        out << report;
      }
    }
  } catch (const DivergenceError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
