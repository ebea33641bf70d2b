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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gprune/autodiff.hpp"
#include "gprune/ops.hpp"
#include "gprune/tensor.hpp"

namespace gprune {

enum class LayerKind { input, conv, dense, pool, relu, add_join, output };
enum class PoolKind { max, avg };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);
std::string pool_kind_name(PoolKind k);
PoolKind pool_kind_from_name(const std::string& s);

/// One node of the graph. conv and dense layers share the kernel layout
/// (kh, kw, cin, cout); a dense layer is executed as a valid convolution whose
/// kernel covers its whole input feature map, so its receptive field doubles
/// as the kernel size in penalty computations.
struct Layer {
  int id = -1;
  LayerKind kind = LayerKind::input;
  std::string name;
  std::vector<int> inputs;

  // conv / dense
  int kh = 0;
  int kw = 0;
  int cin = 0;
  int cout = 0;
  int stride = 1;
  Padding padding = Padding::valid;
  bool has_batchnorm = false;
  bool has_bias = false;
  bool prunable = false;
  Tensor kernel;
  Tensor bias;
  BatchNormParams bn;

  // pool
  PoolKind pool_kind = PoolKind::max;
  int pool_k = 0;
  int pool_stride = 1;
  Padding pool_padding = Padding::valid;

  // filled by infer_shapes()
  int out_h = 0;
  int out_w = 0;
  int out_c = 0;

  bool is_weighted() const { return kind == LayerKind::conv || kind == LayerKind::dense; }
};

/// Mutable view of one parameter tensor, addressed by a stable name used in
/// gradient maps and checkpoint manifests.
struct ParamRef {
  int layer = -1;
  std::string field;  // kernel | bias | gamma | beta | moving_mean | moving_var
  Tensor* tensor = nullptr;
  bool trainable = false;
  std::string name() const { return "L" + std::to_string(layer) + "." + field; }
};

/// Result of a training-mode forward pass on a tape: the logits node, the
/// leaf node for every parameter, and the post-batch moving statistics for
/// each batch-normalized layer (applied by the caller after the step).
struct TrainForward {
  NodeRef logits;
  std::map<std::string, NodeRef> params;
  std::vector<std::pair<int, std::pair<Tensor, Tensor>>> moving_updates;
};

struct NetworkGraph {
  std::vector<Layer> layers;  // topological order; layers[i].id == i
  int input_h = 0;
  int input_w = 0;
  int input_c = 0;
  int num_classes = 0;
  std::string preset;

  const Layer& layer(int id) const;
  Layer& layer(int id);
  int num_layers() const { return static_cast<int>(layers.size()); }
  int output_layer() const;

  /// Walks the layer list computing feature-map dims; throws on arithmetic
  /// that cannot be satisfied (e.g. kernel larger than its input).
  void infer_shapes();
  /// Structural checks: ids, topological inputs, reachability, parameter
  /// shapes, the no-BN-on-final-layer constraint, bias-or-BN on every
  /// weighted layer, prunable implies batch-normalized with consumers.
  void validate() const;

  std::vector<int> successors(int id) const;
  /// Conv/dense layers that read layer id's output channels, traversing
  /// through relu/pool/add_join and stopping at the first weighted layer.
  std::vector<int> consumers(int id) const;
  std::vector<int> prunable_layers() const;

  /// Per-channel memory cost of layer id as an exact rational
  /// (numerator, denominator): numerator = kh*kw*cin + sum over consumers of
  /// k'h*k'w*c' + out_h*out_w, denominator = input_h*input_w.
  std::pair<std::int64_t, std::int64_t> penalty_lambda_rational(int id) const;
  double penalty_lambda(int id) const;

  /// params = kernel elements + biases + 4 vectors (gamma, beta, moving
  /// mean, moving variance) per batch-normalized layer.
  std::int64_t count_params() const;
  /// flops = 2 * multiply-accumulates of conv/dense passes for one image.
  std::int64_t count_flops() const;

  /// Deterministically ordered parameter views; trainable covers kernel,
  /// bias, gamma, beta; the moving statistics are state but not trained.
  std::vector<ParamRef> parameters();
  std::vector<ParamRef> trainable_parameters();

  /// Inference-mode forward pass; returns the output layer's raw feature
  /// map of shape (N, out_h, out_w, out_c).
  Tensor forward(const Tensor& x) const;
  /// Inference-mode forward keeping every layer's activation, indexed by
  /// layer id.
  std::vector<Tensor> forward_all(const Tensor& x) const;
  /// forward() flattened to (N, num_classes); requires a 1x1 spatial output.
  Tensor logits(const Tensor& x) const;
  /// Training-mode forward on a tape; batch statistics are used for
  /// normalization and the returned moving updates reflect one exponential
  /// step from the current stored statistics.
  TrainForward forward_train(Tape& tape, const Tensor& x) const;
};

/// Graph builders for the shipped architectures: convnet_table1 (3 conv + 2
/// dense on 32x32x3), resnet20 (9 residual blocks on 32x32x3), mnist_small
/// (2 conv + 1 dense on 28x28x1).
NetworkGraph build_preset(const std::string& name);

/// He-normal kernels, zero biases, unit gamma / zero beta, fresh moving
/// statistics. Deterministic given the generator state.
void initialize_parameters(NetworkGraph& g, Rng& rng);

/// Fraction of correctly classified samples under inference-mode forward.
double accuracy(const NetworkGraph& g, const Tensor& images,
                const std::vector<int>& labels, int batch_size = 256);

}  // namespace gprune
