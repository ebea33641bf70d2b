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
#pragma once

#include <cstdint>
#include <string>

#include "gprune/checkpoint.hpp"
#include "gprune/data.hpp"
#include "gprune/ista.hpp"
#include "gprune/prune.hpp"
#include "gprune/runconfig.hpp"

namespace gprune {

/// Seed streams: every random draw of a run derives from the config seed
/// mixed with a fixed stream tag, so subcommands replay bitwise.
constexpr std::uint64_t kInitStream = 0x696e6974;     // parameter init
constexpr std::uint64_t kAugmentStream = 0x6175676d;  // batch augmentation

/// Train and (optional) test split, standardized with the training split's
/// global statistics when the dataset config asks for it.
struct SplitData {
  Dataset train;
  Dataset test;
  bool has_test = false;
};
SplitData load_dataset(const DatasetConfig& cfg);

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainResult result;
  std::string warning;  // stage-chain advisories, empty when none
  std::string checkpoint_path;
  std::string monitor_path;
};

/// Sparsified (or, at rho = 0, plain baseline) training: builds the model
/// from the preset or continues from start_checkpoint, applies the train
/// alpha rescale on top of whatever rescale the checkpoint carries, runs the
/// training loop, and writes checkpoint.ckpt plus monitor.csv under out_dir.
/// On divergence the last finite state is saved as last_good.ckpt and the
/// DivergenceError is rethrown.
TrainOutcome cmd_train(const RunConfig& cfg, const std::string& out_dir,
                       const std::string& start_checkpoint = "");

struct PruneOutcome {
  Checkpoint checkpoint;
  PruneReport report;
  std::string warning;
  std::string checkpoint_path;
  std::string report_path;
};

/// Removes constant channels and undoes the recorded alpha rescale on the
/// rewritten graph, leaving alpha_applied = 1. Pruning a checkpoint that
/// never saw ISTA training is allowed but flagged in the warning, since the
/// mask may be empty. Writes checkpoint.ckpt and prune_report.csv.
PruneOutcome cmd_prune(const std::string& checkpoint_path,
                       const std::string& out_dir);

/// Post-prune recovery with plain SGD, using the config's finetune block.
/// Writes checkpoint.ckpt (stage finetuned) and monitor.csv.
TrainOutcome cmd_finetune(const std::string& checkpoint_path,
                          const RunConfig& cfg, const std::string& out_dir);

struct EvalMetrics {
  double top1 = 0.0;
  std::int64_t params = 0;
  std::int64_t flops = 0;

  /// CSV with header top1_accuracy,params,flops.
  std::string to_csv() const;
};

/// Top-1 accuracy on the test split plus model size. Writes metrics.csv
/// under out_dir unless out_dir is empty.
EvalMetrics cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                     const std::string& out_dir);

/// Human-readable state report: stage and counters, per-layer penalty
/// weights, gamma magnitude histograms with exact-zero counts, tuning
/// warnings derived from the recorded history, and a suggested alpha.
std::string cmd_inspect(const std::string& checkpoint_path);

}  // namespace gprune
