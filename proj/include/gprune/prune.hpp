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

#include "gprune/graph.hpp"
#include "gprune/tensor.hpp"

namespace gprune {

/// Channel selection for one prunable layer. keep[k] is derived from the
/// bitwise test gamma[k] != 0.0; constants[k] holds the post-relu output
/// value ReLU(beta[k]) of a dropped channel and 0 for kept channels.
struct LayerMask {
  int layer_id = -1;
  std::vector<bool> keep;
  std::vector<double> constants;

  int total() const { return static_cast<int>(keep.size()); }
  int kept() const;
  int dropped() const { return total() - kept(); }
};

/// Masks for every prunable layer of a graph, in layer-id order.
struct PruneMask {
  std::vector<LayerMask> layers;

  const LayerMask* find(int layer_id) const;
  /// True when no layer drops any channel.
  bool empty() const;
  /// Dropped channels over total channels across all masked layers.
  double sparsity() const;
};

/// Per-layer channel and parameter bookkeeping of one rewrite.
struct PruneReport {
  struct Row {
    int layer_id = -1;
    std::string name;
    int kept = 0;
    int total = 0;
    std::int64_t params_before = 0;
    std::int64_t params_after = 0;
  };
  std::vector<Row> rows;  // one per weighted layer
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
  std::int64_t flops_before = 0;
  std::int64_t flops_after = 0;
  /// Set when a dropped channel with a positive constant feeds a
  /// same-padded consumer: the absorption ignores the padded border there,
  /// so the rewrite is approximate and the model should be fine-tuned.
  bool requires_finetune = false;

  double param_ratio() const;
  /// CSV with header layer_id,kept,total,params_before,params_after.
  std::string to_csv() const;
};

struct RewriteResult {
  NetworkGraph graph;
  PruneReport report;
};

/// Reads the exact zeros of every prunable layer's gamma vector. Layers
/// where nothing is dropped still appear with an all-keep mask.
PruneMask detect_constant_channels(const NetworkGraph& g);

/// New consumer bias b'[o] = b[o] + sum over dropped k of
/// ReLU(beta[k]) * sum_{i,j} W[i,j,k,o]. keep indexes W's input channels.
Tensor absorb_into_bias(const Tensor& bias, const std::vector<bool>& keep,
                        const Tensor& beta, const Tensor& consumer_kernel);

/// BN counterpart: mu'[o] = mu[o] - the same correction, so the consumer's
/// normalized output is unchanged after the constant inputs disappear.
Tensor absorb_into_moving_mean(const Tensor& moving_mean,
                               const std::vector<bool>& keep,
                               const Tensor& beta,
                               const Tensor& consumer_kernel);

/// Removes every dropped channel: producer kernels lose output channels, BN
/// vectors shrink, consumer kernels lose input channels, and each consumer's
/// bias or moving mean absorbs the constants that used to arrive. The input
/// graph is untouched. A layer whose mask drops every channel is rejected.
RewriteResult rewrite(const NetworkGraph& g, const PruneMask& mask);

/// Replaces a biased, un-normalized weighted layer by its batch-normalized
/// equivalent: bias removed, gamma = sqrt(var + eps), beta = bias + mean,
/// with mean/var measured per channel from the biasless outputs on the
/// calibration inputs. Inference output is preserved exactly; the layer
/// becomes prunable when it has consumers.
NetworkGraph bn_equivalent_wrap(const NetworkGraph& g, int layer_id,
                                const std::vector<Tensor>& calibration);

/// Channel and size bookkeeping between two versions of a graph. after may
/// be the same graph as before (no pruning).
PruneReport report(const NetworkGraph& before, const NetworkGraph& after);

}  // namespace gprune
