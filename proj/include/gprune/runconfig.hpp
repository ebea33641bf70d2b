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
#include <vector>

#include "gprune/data.hpp"
#include "gprune/ista.hpp"

namespace gprune {

/// Where training and evaluation data come from. kind selects which path
/// fields apply: "synth" draws from the generator (held-out tail fraction as
/// the test split), "mnist" reads an IDX image/label pair per split,
/// "cifar10" reads one binary batch file per split. Test-side paths may stay
/// empty when only training is run. When standardize is set, global
/// per-channel statistics of the training images are applied to both splits.
struct DatasetConfig {
  std::string kind = "synth";
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::string train_batch;
  std::string test_batch;
  SynthSpec synth;
  double synth_test_fraction = 0.25;
  bool standardize = true;

  void validate() const;
};

/// One run of the pipeline, read from a JSON config file. Every key is
/// validated before any compute starts and unknown keys are rejected at
/// every nesting level. train holds the sparsified-training parameters;
/// finetune holds the post-prune pass and must describe plain SGD (rho = 0,
/// alpha = 1). The augment block applies during training only, runs on
/// already-standardized batches (its own standardize step stays off), and is
/// inert unless augment_enabled; note that pad/crop must then reproduce the
/// model's input size.
struct RunConfig {
  std::string preset;
  DatasetConfig dataset;
  IstaConfig train;
  IstaConfig finetune;
  AugmentConfig augment;
  bool augment_enabled = false;
  std::uint64_t seed = 0;
  std::string out_dir = ".";

  void validate() const;
};

/// Parses JSON text into a RunConfig, applying --override entries of the
/// form dotted.path=value on top (values parse as JSON scalars, falling back
/// to strings). Semantic problems (unknown keys, bad values, failed
/// validation) raise std::invalid_argument; malformed JSON raises IoError.
RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides = {});

/// parse_run_config on a file's contents; missing files raise IoError.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

/// The resolved config as canonical JSON (sorted keys, every field present).
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace gprune
