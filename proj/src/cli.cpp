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
#include "gprune/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "gprune/graph.hpp"

namespace gprune {
namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " +
                        ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failure on " + path);
}

Dataset slice_dataset(const Dataset& d, int begin, int count,
                      const std::string& split) {
  const std::int64_t row = d.images.size() / d.images.dim(0);
  std::vector<int> shape = d.images.shape();
  shape[0] = count;
  Dataset out;
  out.images = Tensor(shape, d.images.dtype());
  std::copy(d.images.data() + begin * row,
            d.images.data() + (begin + count) * row, out.images.data());
  out.labels.assign(d.labels.begin() + begin, d.labels.begin() + begin + count);
  out.split = split;
  out.num_classes = d.num_classes;
  return out;
}

void check_model_matches_data(const NetworkGraph& g, const Dataset& d) {
  if (g.input_h != d.images.dim(1) || g.input_w != d.images.dim(2) ||
      g.input_c != d.images.dim(3))
    throw std::invalid_argument(
        "model expects " + std::to_string(g.input_h) + "x" +
        std::to_string(g.input_w) + "x" + std::to_string(g.input_c) +
        " input but the dataset provides " + std::to_string(d.images.dim(1)) +
        "x" + std::to_string(d.images.dim(2)) + "x" +
        std::to_string(d.images.dim(3)));
  if (g.num_classes != d.num_classes)
    throw std::invalid_argument("model has " + std::to_string(g.num_classes) +
                                " classes but the dataset has " +
                                std::to_string(d.num_classes));
}

std::string stage_of_training(const IstaConfig& cfg) {
  return (cfg.rho != 0.0 || cfg.rho_warm != 0.0) ? "sparsified" : "baseline";
}

}  // namespace

SplitData load_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  SplitData out;
  if (cfg.kind == "synth") {
    const Dataset full = synth_dataset(cfg.synth);
    const int n_test = static_cast<int>(
        std::lround(cfg.synth.n * cfg.synth_test_fraction));
    const int n_train = cfg.synth.n - n_test;
    if (n_train < 1)
      throw std::invalid_argument("synth_test_fraction leaves no training data");
    out.train = slice_dataset(full, 0, n_train, "train");
    if (n_test > 0) {
      out.test = slice_dataset(full, n_train, n_test, "test");
      out.has_test = true;
    }
  } else if (cfg.kind == "mnist") {
    out.train = load_mnist(cfg.train_images, cfg.train_labels, "train");
    if (!cfg.test_images.empty() && !cfg.test_labels.empty()) {
      out.test = load_mnist(cfg.test_images, cfg.test_labels, "test");
      out.has_test = true;
    }
  } else {
    out.train = load_cifar10(cfg.train_batch, "train");
    if (!cfg.test_batch.empty()) {
      out.test = load_cifar10(cfg.test_batch, "test");
      out.has_test = true;
    }
  }

  if (cfg.standardize) {
    const ChannelStats stats = channel_stats(out.train.images);
    out.train.images = standardize(out.train.images, stats);
    out.train.stats = stats;
    if (out.has_test) {
      out.test.images = standardize(out.test.images, stats);
      out.test.stats = stats;
    }
  }
  return out;
}

TrainOutcome cmd_train(const RunConfig& cfg, const std::string& out_dir,
                       const std::string& start_checkpoint) {
  cfg.validate();
  ensure_dir(out_dir);
  const SplitData data = load_dataset(cfg.dataset);

  TrainOutcome out;
  NetworkGraph g;
  double alpha_applied = 1.0;
  std::string start_stage = "init";
  if (start_checkpoint.empty()) {
    if (cfg.preset.empty())
      throw std::invalid_argument(
          "train needs a model: set preset in the config or start from a "
          "checkpoint");
    g = build_preset(cfg.preset);
    Rng init_rng(mix_seed(cfg.seed, kInitStream));
    initialize_parameters(g, init_rng);
  } else {
    Checkpoint start = load_checkpoint(start_checkpoint);
    g = std::move(start.graph);
    alpha_applied = start.meta.alpha_applied;
    start_stage = start.meta.stage;
  }
  check_model_matches_data(g, data.train);

  if (cfg.train.alpha != 1.0) {
    rescale_gamma_w(g, cfg.train.alpha);
    alpha_applied *= cfg.train.alpha;
  }

  BatchHook hook;
  std::shared_ptr<Rng> aug_rng;
  if (cfg.augment_enabled) {
    AugmentConfig acfg = cfg.augment;
    acfg.standardize = false;  // batches are standardized dataset-wide
    if (acfg.pad_crop && (acfg.crop != g.input_h || acfg.crop != g.input_w))
      throw std::invalid_argument(
          "augment.crop must reproduce the model input size " +
          std::to_string(g.input_h) + "x" + std::to_string(g.input_w));
    aug_rng = std::make_shared<Rng>(mix_seed(cfg.seed, kAugmentStream));
    hook = [acfg, aug_rng](Tensor& batch, std::int64_t) {
      batch = augment(batch, acfg, {}, *aug_rng);
    };
  }

  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.config = cfg.train;
  try {
    out.result =
        train(g, data.train.images, data.train.labels, cfg.train, cfg.seed,
              hook);
  } catch (const DivergenceError& e) {
    meta.stage = start_stage;
    meta.alpha_applied = alpha_applied;
    meta.monitor = e.monitor;
    save_checkpoint((std::filesystem::path(out_dir) / "last_good.ckpt")
                        .string(),
                    e.last_good, meta);
    throw;
  }

  meta.stage = stage_of_training(cfg.train);
  meta.alpha_applied = alpha_applied;
  meta.monitor = out.result.monitor;
  out.checkpoint.graph = std::move(g);
  out.checkpoint.meta = meta;
  out.checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint.ckpt").string();
  out.monitor_path = (std::filesystem::path(out_dir) / "monitor.csv").string();
  save_checkpoint(out.checkpoint_path, out.checkpoint.graph, meta);
  write_text(out.monitor_path, out.result.monitor.to_csv());
  return out;
}

PruneOutcome cmd_prune(const std::string& checkpoint_path,
                       const std::string& out_dir) {
  ensure_dir(out_dir);
  Checkpoint in = load_checkpoint(checkpoint_path);
  PruneOutcome out;
  if (in.meta.stage != "sparsified")
    out.warning = "checkpoint stage is \"" + in.meta.stage +
                  "\", not \"sparsified\"; no ISTA training preceded this "
                  "prune and the channel masks may be empty";

  const PruneMask mask = detect_constant_channels(in.graph);
  RewriteResult rewritten = rewrite(in.graph, mask);
  if (in.meta.alpha_applied != 1.0) {
    rescale_gamma_w(rewritten.graph, 1.0 / in.meta.alpha_applied);
    in.meta.alpha_applied = 1.0;
  }

  out.checkpoint.graph = std::move(rewritten.graph);
  out.checkpoint.meta = in.meta;
  out.checkpoint.meta.stage = "pruned";
  out.report = std::move(rewritten.report);
  out.checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint.ckpt").string();
  out.report_path =
      (std::filesystem::path(out_dir) / "prune_report.csv").string();
  save_checkpoint(out.checkpoint_path, out.checkpoint.graph,
                  out.checkpoint.meta);
  write_text(out.report_path, out.report.to_csv());
  return out;
}

TrainOutcome cmd_finetune(const std::string& checkpoint_path,
                          const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  Checkpoint in = load_checkpoint(checkpoint_path);
  const SplitData data = load_dataset(cfg.dataset);
  check_model_matches_data(in.graph, data.train);

  TrainOutcome out;
  if (in.meta.stage != "pruned")
    out.warning = "checkpoint stage is \"" + in.meta.stage +
                  "\", not \"pruned\"; fine-tuning it anyway";

  CheckpointMeta meta = in.meta;
  meta.config = cfg.finetune;
  try {
    out.result = train(in.graph, data.train.images, data.train.labels,
                       cfg.finetune, cfg.seed);
  } catch (const DivergenceError& e) {
    meta.monitor = e.monitor;
    save_checkpoint((std::filesystem::path(out_dir) / "last_good.ckpt")
                        .string(),
                    e.last_good, meta);
    throw;
  }

  meta.stage = "finetuned";
  meta.monitor = out.result.monitor;
  out.checkpoint.graph = std::move(in.graph);
  out.checkpoint.meta = meta;
  out.checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint.ckpt").string();
  out.monitor_path = (std::filesystem::path(out_dir) / "monitor.csv").string();
  save_checkpoint(out.checkpoint_path, out.checkpoint.graph, meta);
  write_text(out.monitor_path, out.result.monitor.to_csv());
  return out;
}

std::string EvalMetrics::to_csv() const {
  return "top1_accuracy,params,flops\n" + fmt_g17(top1) + "," +
         std::to_string(params) + "," + std::to_string(flops) + "\n";
}

EvalMetrics cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                     const std::string& out_dir) {
  cfg.validate();
  Checkpoint in = load_checkpoint(checkpoint_path);
  const SplitData data = load_dataset(cfg.dataset);
  if (!data.has_test)
    throw std::invalid_argument(
        "evaluation needs a test split; the dataset config provides none");
  check_model_matches_data(in.graph, data.test);

  EvalMetrics m;
  m.top1 = accuracy(in.graph, data.test.images, data.test.labels);
  m.params = in.graph.count_params();
  m.flops = in.graph.count_flops();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text((std::filesystem::path(out_dir) / "metrics.csv").string(),
               m.to_csv());
  }
  return m;
}

std::string cmd_inspect(const std::string& checkpoint_path) {
  Checkpoint in = load_checkpoint(checkpoint_path);
  NetworkGraph& g = in.graph;
  std::ostringstream report;
  report << "checkpoint: " << checkpoint_path << "\n"
         << "stage: " << in.meta.stage << "\n"
         << "seed: " << in.meta.seed << "\n"
         << "alpha_applied: " << fmt_g6(in.meta.alpha_applied) << "\n"
         << "params: " << g.count_params() << "\n"
         << "flops: " << g.count_flops() << "\n"
         << "epochs recorded: " << in.meta.monitor.history.size() << "\n";

  const std::vector<int> prunable = g.prunable_layers();
  if (prunable.empty()) {
    report << "no prunable layers\n";
  }
  for (int id : prunable) {
    const Layer& l = g.layer(id);
    const auto [num, den] = g.penalty_lambda_rational(id);
    const Tensor& gamma = l.bn.gamma;
    int zeros = 0;
    double mean_abs = 0.0, max_abs = 0.0;
    for (std::int64_t i = 0; i < gamma.size(); ++i) {
      if (gamma[i] == 0.0) ++zeros;
      mean_abs += std::abs(gamma[i]);
      max_abs = std::max(max_abs, std::abs(gamma[i]));
    }
    mean_abs /= static_cast<double>(gamma.size());

    report << "layer " << id << " (" << l.name << "): lambda = " << num << "/"
           << den << " = " << fmt_g6(static_cast<double>(num) / den) << "\n"
           << "  gamma: " << gamma.size() << " channels, " << zeros
           << " exact zeros (" << fmt_g6(100.0 * zeros / gamma.size())
           << "%), mean |gamma| = " << fmt_g6(mean_abs) << "\n";
    report << "  |gamma| histogram, 8 bins over [0, " << fmt_g6(max_abs)
           << "]:";
    int counts[8] = {0};
    for (std::int64_t i = 0; i < gamma.size(); ++i) {
      const double a = std::abs(gamma[i]);
      int bin = max_abs > 0.0 ? static_cast<int>(a / max_abs * 8.0) : 0;
      counts[std::min(bin, 7)] += 1;
    }
    for (int b = 0; b < 8; ++b) report << " " << counts[b];
    report << "\n";
  }

  for (const std::string& warning : diagnose(in.meta.monitor))
    report << "tuning warning: " << warning << "\n";
  if (!prunable.empty())
    report << "suggested alpha: "
           << fmt_g6(suggest_alpha(g, in.meta.config.mu0,
                                   in.meta.config.rho != 0.0
                                       ? in.meta.config.rho
                                       : in.meta.config.rho_warm))
           << " (mu0 = " << fmt_g6(in.meta.config.mu0)
           << ", rho = " << fmt_g6(in.meta.config.rho) << ")\n";
  return report.str();
}

}  // namespace gprune
