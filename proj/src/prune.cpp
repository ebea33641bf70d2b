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
#include "gprune/prune.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "gprune/ops.hpp"

namespace gprune {

int LayerMask::kept() const {
  int n = 0;
  for (bool k : keep)
    if (k) ++n;
  return n;
}

const LayerMask* PruneMask::find(int layer_id) const {
  for (const LayerMask& lm : layers)
    if (lm.layer_id == layer_id) return &lm;
  return nullptr;
}

bool PruneMask::empty() const {
  for (const LayerMask& lm : layers)
    if (lm.dropped() > 0) return false;
  return true;
}

double PruneMask::sparsity() const {
  std::int64_t dropped = 0, total = 0;
  for (const LayerMask& lm : layers) {
    dropped += lm.dropped();
    total += lm.total();
  }
  return total == 0 ? 0.0
                    : static_cast<double>(dropped) / static_cast<double>(total);
}

double PruneReport::param_ratio() const {
  return params_before == 0 ? 1.0
                            : static_cast<double>(params_after) /
                                  static_cast<double>(params_before);
}

std::string PruneReport::to_csv() const {
  std::string out = "layer_id,kept,total,params_before,params_after\n";
  for (const Row& r : rows) {
    out += std::to_string(r.layer_id);
    out += ',';
    out += std::to_string(r.kept);
    out += ',';
    out += std::to_string(r.total);
    out += ',';
    out += std::to_string(r.params_before);
    out += ',';
    out += std::to_string(r.params_after);
    out += '\n';
  }
  return out;
}

PruneMask detect_constant_channels(const NetworkGraph& g) {
  PruneMask mask;
  for (int id : g.prunable_layers()) {
    const Layer& L = g.layer(id);
    LayerMask lm;
    lm.layer_id = id;
    lm.keep.resize(L.cout);
    lm.constants.assign(L.cout, 0.0);
    for (int k = 0; k < L.cout; ++k) {
      lm.keep[k] = L.bn.gamma[k] != 0.0;
      if (!lm.keep[k]) lm.constants[k] = std::max(L.bn.beta[k], 0.0);
    }
    mask.layers.push_back(std::move(lm));
  }
  return mask;
}

namespace {

/// Per-output-channel correction sum over dropped k of
/// constants[k] * sum_{i,j} W[i,j,k,o].
std::vector<double> absorption_delta(const std::vector<bool>& keep,
                                     const std::vector<double>& constants,
                                     const Tensor& kernel) {
  if (kernel.rank() != 4)
    throw std::invalid_argument("absorption expects a (kh,kw,cin,cout) kernel");
  const int kh = kernel.dim(0), kw = kernel.dim(1);
  const int cin = kernel.dim(2), cout = kernel.dim(3);
  if (static_cast<int>(keep.size()) != cin ||
      static_cast<int>(constants.size()) != cin)
    throw std::invalid_argument(
        "channel mask of size " + std::to_string(keep.size()) +
        " does not match kernel input channels " + std::to_string(cin));
  std::vector<double> delta(cout, 0.0);
  for (int k = 0; k < cin; ++k) {
    if (keep[k] || constants[k] == 0.0) continue;
    for (int o = 0; o < cout; ++o) {
      double wsum = 0.0;
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) wsum += kernel.at({i, j, k, o});
      delta[o] += constants[k] * wsum;
    }
  }
  return delta;
}

std::vector<double> relu_constants(const std::vector<bool>& keep,
                                   const Tensor& beta) {
  if (keep.size() != static_cast<size_t>(beta.size()))
    throw std::invalid_argument("channel mask of size " +
                                std::to_string(keep.size()) +
                                " does not match beta of size " +
                                std::to_string(beta.size()));
  std::vector<double> c(keep.size(), 0.0);
  for (size_t k = 0; k < keep.size(); ++k)
    if (!keep[k]) c[k] = std::max(beta[static_cast<std::int64_t>(k)], 0.0);
  return c;
}

Tensor slice_channel_dim(const Tensor& t, int dim,
                         const std::vector<bool>& keep) {
  std::vector<int> shape = t.shape();
  if (dim < 0 || dim >= static_cast<int>(shape.size()) ||
      shape[dim] != static_cast<int>(keep.size()))
    throw std::invalid_argument("slice mask of size " +
                                std::to_string(keep.size()) +
                                " does not fit tensor " +
                                shape_to_string(t.shape()) + " dim " +
                                std::to_string(dim));
  int kept = 0;
  for (bool k : keep)
    if (k) ++kept;
  std::vector<int> out_shape = shape;
  out_shape[dim] = kept;
  Tensor out(out_shape, t.dtype());

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= shape[d];
  for (size_t d = dim + 1; d < shape.size(); ++d) inner *= shape[d];
  std::int64_t dst = 0;
  for (std::int64_t a = 0; a < outer; ++a)
    for (int c = 0; c < static_cast<int>(keep.size()); ++c) {
      if (!keep[c]) continue;
      const std::int64_t src = (a * shape[dim] + c) * inner;
      for (std::int64_t b = 0; b < inner; ++b) out[dst++] = t[src + b];
    }
  return out;
}

/// Weighted consumers of `id` plus whether a relu sits on the path, found by
/// walking the relu/pool chain. add_join mixes branches, so a constant
/// channel cannot be traced through it.
struct ConsumerPath {
  int layer_id = 0;
  bool through_relu = false;
};

std::vector<ConsumerPath> consumer_paths(const NetworkGraph& g, int id) {
  std::vector<ConsumerPath> out;
  std::deque<ConsumerPath> frontier;
  frontier.push_back({id, false});
  while (!frontier.empty()) {
    ConsumerPath cur = frontier.front();
    frontier.pop_front();
    for (int s : g.successors(cur.layer_id)) {
      const Layer& S = g.layer(s);
      if (S.is_weighted()) {
        out.push_back({s, cur.through_relu});
      } else if (S.kind == LayerKind::relu) {
        frontier.push_back({s, true});
      } else if (S.kind == LayerKind::pool) {
        frontier.push_back({s, cur.through_relu});
      } else if (S.kind == LayerKind::add_join) {
        throw std::logic_error("constant channels of layer " +
                               g.layer(id).name +
                               " cannot be absorbed across the join " +
                               S.name);
      }
      // output markers end the walk
    }
  }
  std::sort(out.begin(), out.end(),
            [](const ConsumerPath& a, const ConsumerPath& b) {
              return a.layer_id < b.layer_id;
            });
  return out;
}

/// True when the layer's window actually pads its input.
bool conv_pads(const Layer& C, int in_h, int in_w) {
  if (C.padding != Padding::same) return false;
  const ops::ConvGeom geom =
      ops::conv_geometry(in_h, in_w, C.kh, C.kw, C.stride, C.padding);
  return (geom.out_h - 1) * C.stride + C.kh > in_h ||
         (geom.out_w - 1) * C.stride + C.kw > in_w;
}

std::int64_t layer_params(const Layer& L) {
  if (!L.is_weighted()) return 0;
  std::int64_t n = L.kernel.size();
  if (L.has_bias) n += L.bias.size();
  if (L.has_batchnorm) n += 4 * static_cast<std::int64_t>(L.cout);
  return n;
}

}  // namespace

Tensor absorb_into_bias(const Tensor& bias, const std::vector<bool>& keep,
                        const Tensor& beta, const Tensor& consumer_kernel) {
  const std::vector<double> delta =
      absorption_delta(keep, relu_constants(keep, beta), consumer_kernel);
  if (bias.size() != static_cast<std::int64_t>(delta.size()))
    throw std::invalid_argument("bias of size " + std::to_string(bias.size()) +
                                " does not match kernel output channels " +
                                std::to_string(delta.size()));
  Tensor out = bias;
  for (std::int64_t o = 0; o < out.size(); ++o) out[o] += delta[o];
  out.requantize();
  return out;
}

Tensor absorb_into_moving_mean(const Tensor& moving_mean,
                               const std::vector<bool>& keep,
                               const Tensor& beta,
                               const Tensor& consumer_kernel) {
  const std::vector<double> delta =
      absorption_delta(keep, relu_constants(keep, beta), consumer_kernel);
  if (moving_mean.size() != static_cast<std::int64_t>(delta.size()))
    throw std::invalid_argument("moving mean of size " +
                                std::to_string(moving_mean.size()) +
                                " does not match kernel output channels " +
                                std::to_string(delta.size()));
  Tensor out = moving_mean;
  for (std::int64_t o = 0; o < out.size(); ++o) out[o] -= delta[o];
  out.requantize();
  return out;
}

RewriteResult rewrite(const NetworkGraph& g, const PruneMask& mask) {
  NetworkGraph out = g;
  bool requires_finetune = false;

  std::vector<const LayerMask*> ordered;
  for (const LayerMask& lm : mask.layers) ordered.push_back(&lm);
  std::sort(ordered.begin(), ordered.end(),
            [](const LayerMask* a, const LayerMask* b) {
              return a->layer_id < b->layer_id;
            });

  for (const LayerMask* lm : ordered) {
    if (lm->layer_id < 0 || lm->layer_id >= static_cast<int>(out.layers.size()))
      throw std::invalid_argument("mask references unknown layer " +
                                  std::to_string(lm->layer_id));
    Layer& P = out.layer(lm->layer_id);
    if (!P.is_weighted() || !P.has_batchnorm)
      throw std::invalid_argument("mask on layer " + P.name +
                                  " which is not batch-normalized");
    if (lm->total() != P.cout)
      throw std::invalid_argument(
          "mask of size " + std::to_string(lm->total()) +
          " does not match layer " + P.name + " with " +
          std::to_string(P.cout) + " channels");
    if (lm->dropped() == 0) continue;
    if (lm->kept() == 0)
      throw std::invalid_argument(
          "every channel of layer " + P.name +
          " is dropped; the graph cannot be rewritten (the sparsity penalty "
          "was too large)");

    const std::vector<ConsumerPath> paths = consumer_paths(out, lm->layer_id);
    if (paths.empty())
      throw std::invalid_argument("masked layer " + P.name +
                                  " has no consumers to absorb into");

    for (const ConsumerPath& cp : paths) {
      Layer& C = out.layer(cp.layer_id);
      if (C.cin != lm->total())
        throw std::logic_error("consumer " + C.name + " reads " +
                               std::to_string(C.cin) +
                               " channels but layer " + P.name + " emits " +
                               std::to_string(lm->total()));
      // the constant emitted by a dropped channel, as seen by this consumer
      std::vector<double> constants(lm->total(), 0.0);
      for (int k = 0; k < lm->total(); ++k) {
        if (lm->keep[k]) continue;
        constants[k] =
            cp.through_relu ? std::max(P.bn.beta[k], 0.0) : P.bn.beta[k];
      }
      const std::vector<double> delta =
          absorption_delta(lm->keep, constants, C.kernel);

      const Layer& feeder = out.layer(C.inputs[0]);
      if (conv_pads(C, feeder.out_h, feeder.out_w))
        for (int k = 0; k < lm->total(); ++k)
          if (!lm->keep[k] && constants[k] != 0.0) requires_finetune = true;

      if (C.has_batchnorm) {
        for (std::int64_t o = 0; o < C.bn.moving_mean.size(); ++o)
          C.bn.moving_mean[o] -= delta[o];
        C.bn.moving_mean.requantize();
      } else {
        for (std::int64_t o = 0; o < C.bias.size(); ++o) C.bias[o] += delta[o];
        C.bias.requantize();
      }
      C.kernel = slice_channel_dim(C.kernel, 2, lm->keep);
      C.cin = lm->kept();
    }

    P.kernel = slice_channel_dim(P.kernel, 3, lm->keep);
    if (P.has_bias) P.bias = slice_channel_dim(P.bias, 0, lm->keep);
    P.bn.gamma = slice_channel_dim(P.bn.gamma, 0, lm->keep);
    P.bn.beta = slice_channel_dim(P.bn.beta, 0, lm->keep);
    P.bn.moving_mean = slice_channel_dim(P.bn.moving_mean, 0, lm->keep);
    P.bn.moving_var = slice_channel_dim(P.bn.moving_var, 0, lm->keep);
    P.cout = lm->kept();
  }

  out.infer_shapes();
  out.validate();
  PruneReport rep = report(g, out);
  rep.requires_finetune = requires_finetune;
  return {std::move(out), std::move(rep)};
}

NetworkGraph bn_equivalent_wrap(const NetworkGraph& g, int layer_id,
                                const std::vector<Tensor>& calibration) {
  if (layer_id < 0 || layer_id >= static_cast<int>(g.layers.size()))
    throw std::invalid_argument("unknown layer " + std::to_string(layer_id));
  const Layer& L = g.layer(layer_id);
  if (!L.is_weighted() || !L.has_bias || L.has_batchnorm)
    throw std::invalid_argument(
        "layer " + L.name +
        " is not a plain biased layer; nothing to wrap");
  if (calibration.empty())
    throw std::invalid_argument("calibration set is empty");

  const int cout = L.cout;
  std::vector<double> sum(cout, 0.0), sumsq(cout, 0.0);
  std::int64_t count = 0;
  for (const Tensor& batch : calibration) {
    const std::vector<Tensor> acts = g.forward_all(batch);
    // channel statistics of the biasless response
    const Tensor y =
        ops::conv2d(acts[L.inputs[0]], L.kernel, L.stride, L.padding);
    const std::int64_t positions = y.size() / cout;
    for (std::int64_t p = 0; p < positions; ++p)
      for (int c = 0; c < cout; ++c) {
        const double v = y[p * cout + c];
        sum[c] += v;
        sumsq[c] += v * v;
      }
    count += positions;
  }

  NetworkGraph out = g;
  Layer& W = out.layer(layer_id);
  BatchNormParams bn = BatchNormParams::identity(cout);
  for (int c = 0; c < cout; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var =
        std::max(0.0, sumsq[c] / static_cast<double>(count) - mean * mean);
    bn.moving_mean[c] = mean;
    bn.moving_var[c] = var;
    bn.gamma[c] = std::sqrt(var + bn.epsilon);
    bn.beta[c] = W.bias[c] + mean;
  }
  W.has_bias = false;
  W.bias = Tensor();
  W.has_batchnorm = true;
  W.bn = std::move(bn);
  W.prunable = !out.consumers(layer_id).empty();
  out.validate();
  return out;
}

PruneReport report(const NetworkGraph& before, const NetworkGraph& after) {
  if (before.layers.size() != after.layers.size())
    throw std::invalid_argument(
        "graphs with different layer counts cannot be compared");
  PruneReport rep;
  for (const Layer& B : before.layers) {
    const Layer& A = after.layer(B.id);
    if (A.kind != B.kind || A.name != B.name)
      throw std::invalid_argument("layer " + std::to_string(B.id) +
                                  " differs in kind or name between graphs");
    if (!B.is_weighted()) continue;
    PruneReport::Row row;
    row.layer_id = B.id;
    row.name = B.name;
    row.kept = A.cout;
    row.total = B.cout;
    row.params_before = layer_params(B);
    row.params_after = layer_params(A);
    rep.rows.push_back(std::move(row));
  }
  rep.params_before = before.count_params();
  rep.params_after = after.count_params();
  rep.flops_before = before.count_flops();
  rep.flops_after = after.count_flops();
  return rep;
}

}  // namespace gprune
