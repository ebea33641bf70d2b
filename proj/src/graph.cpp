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
#include "gprune/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace gprune {

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::pool: return "pool";
    case LayerKind::relu: return "relu";
    case LayerKind::add_join: return "add_join";
    case LayerKind::output: return "output";
  }
  throw std::logic_error("unhandled LayerKind");
}

LayerKind layer_kind_from_name(const std::string& s) {
  for (LayerKind k : {LayerKind::input, LayerKind::conv, LayerKind::dense,
                      LayerKind::pool, LayerKind::relu, LayerKind::add_join,
                      LayerKind::output}) {
    if (layer_kind_name(k) == s) return k;
  }
  throw std::invalid_argument("unknown layer kind: " + s);
}

std::string pool_kind_name(PoolKind k) {
  return k == PoolKind::max ? "max" : "avg";
}

PoolKind pool_kind_from_name(const std::string& s) {
  if (s == "max") return PoolKind::max;
  if (s == "avg") return PoolKind::avg;
  throw std::invalid_argument("unknown pool kind: " + s);
}

const Layer& NetworkGraph::layer(int id) const {
  if (id < 0 || id >= num_layers())
    throw std::out_of_range("layer id " + std::to_string(id) + " out of range");
  return layers[id];
}

Layer& NetworkGraph::layer(int id) {
  if (id < 0 || id >= num_layers())
    throw std::out_of_range("layer id " + std::to_string(id) + " out of range");
  return layers[id];
}

int NetworkGraph::output_layer() const {
  for (int i = num_layers() - 1; i >= 0; --i)
    if (layers[i].kind == LayerKind::output) return i;
  throw std::logic_error("graph has no output layer");
}

void NetworkGraph::infer_shapes() {
  for (Layer& L : layers) {
    switch (L.kind) {
      case LayerKind::input:
        L.out_h = input_h;
        L.out_w = input_w;
        L.out_c = input_c;
        break;
      case LayerKind::conv:
      case LayerKind::dense: {
        const Layer& in = layer(L.inputs.at(0));
        if (L.cin != in.out_c)
          throw std::invalid_argument(
              "layer " + L.name + " expects " + std::to_string(L.cin) +
              " input channels but its producer provides " +
              std::to_string(in.out_c));
        ops::ConvGeom g = ops::conv_geometry(in.out_h, in.out_w, L.kh, L.kw,
                                             L.stride, L.padding);
        L.out_h = g.out_h;
        L.out_w = g.out_w;
        L.out_c = L.cout;
        break;
      }
      case LayerKind::pool: {
        const Layer& in = layer(L.inputs.at(0));
        ops::ConvGeom g = ops::conv_geometry(in.out_h, in.out_w, L.pool_k,
                                             L.pool_k, L.pool_stride,
                                             L.pool_padding);
        L.out_h = g.out_h;
        L.out_w = g.out_w;
        L.out_c = in.out_c;
        break;
      }
      case LayerKind::relu:
      case LayerKind::output: {
        const Layer& in = layer(L.inputs.at(0));
        L.out_h = in.out_h;
        L.out_w = in.out_w;
        L.out_c = in.out_c;
        break;
      }
      case LayerKind::add_join: {
        const Layer& a = layer(L.inputs.at(0));
        const Layer& b = layer(L.inputs.at(1));
        if (a.out_h != b.out_h || a.out_w != b.out_w)
          throw std::invalid_argument(
              "add_join " + L.name + " inputs disagree on spatial dims");
        L.out_h = a.out_h;
        L.out_w = a.out_w;
        L.out_c = std::max(a.out_c, b.out_c);
        break;
      }
    }
  }
}

void NetworkGraph::validate() const {
  if (layers.empty()) throw std::invalid_argument("graph has no layers");
  if (layers[0].kind != LayerKind::input)
    throw std::invalid_argument("layer 0 must be the input");
  for (int i = 0; i < num_layers(); ++i) {
    const Layer& L = layers[i];
    if (L.id != i)
      throw std::invalid_argument("layer ids must equal their positions");
    const size_t arity = L.kind == LayerKind::input    ? 0u
                         : L.kind == LayerKind::add_join ? 2u
                                                         : 1u;
    if (L.inputs.size() != arity)
      throw std::invalid_argument("layer " + L.name + " has " +
                                  std::to_string(L.inputs.size()) +
                                  " inputs, expected " + std::to_string(arity));
    for (int in : L.inputs)
      if (in < 0 || in >= i)
        throw std::invalid_argument("layer " + L.name +
                                    " reads a non-preceding layer");
    if (L.is_weighted()) {
      if (L.kh < 1 || L.kw < 1 || L.cin < 1 || L.cout < 1 || L.stride < 1)
        throw std::invalid_argument("layer " + L.name + " has bad kernel dims");
      const std::vector<int> want = {L.kh, L.kw, L.cin, L.cout};
      if (L.kernel.shape() != want)
        throw std::invalid_argument("layer " + L.name +
                                    " kernel tensor does not match its dims");
      if (!L.has_bias && !L.has_batchnorm)
        throw std::invalid_argument(
            "layer " + L.name + " needs a bias or batch normalization");
      if (L.has_bias && (L.bias.rank() != 1 || L.bias.dim(0) != L.cout))
        throw std::invalid_argument("layer " + L.name + " bias length mismatch");
      if (L.has_batchnorm) {
        L.bn.validate();
        if (L.bn.channels() != L.cout)
          throw std::invalid_argument("layer " + L.name +
                                      " batchnorm channel mismatch");
      }
      if (L.prunable && !L.has_batchnorm)
        throw std::invalid_argument("prunable layer " + L.name +
                                    " must be batch normalized");
      if (L.prunable && consumers(i).empty())
        throw std::invalid_argument("prunable layer " + L.name +
                                    " has no consumers");
    }
    if (L.kind == LayerKind::pool && (L.pool_k < 1 || L.pool_stride < 1))
      throw std::invalid_argument("layer " + L.name + " has bad pool dims");
  }
  // reachability from the input
  std::vector<char> reached(layers.size(), 0);
  reached[0] = 1;
  for (const Layer& L : layers)
    for (int in : L.inputs)
      if (reached[in]) reached[L.id] = 1;
  for (const Layer& L : layers)
    if (!reached[L.id])
      throw std::invalid_argument("layer " + L.name +
                                  " is unreachable from the input");
  // the classifier (last weighted layer on the output path) carries no BN;
  // the walk stops at an add_join, which has no single classifier. Graphs
  // that declare no classes are feature extractors without a classifier.
  int cursor = output_layer();
  while (!layers[cursor].is_weighted() && layers[cursor].inputs.size() == 1)
    cursor = layers[cursor].inputs[0];
  if (num_classes > 0 && layers[cursor].is_weighted() &&
      layers[cursor].has_batchnorm)
    throw std::invalid_argument(
        "final layer " + layers[cursor].name + " must not be batch normalized");
  if (num_classes > 0 && layers[cursor].is_weighted() &&
      layers[cursor].cout != num_classes)
    throw std::invalid_argument("final layer width does not match num_classes");
}

std::vector<int> NetworkGraph::successors(int id) const {
  std::vector<int> out;
  for (const Layer& L : layers)
    for (int in : L.inputs)
      if (in == id) {
        out.push_back(L.id);
        break;
      }
  return out;
}

std::vector<int> NetworkGraph::consumers(int id) const {
  layer(id);
  std::set<int> found;
  std::vector<char> seen(layers.size(), 0);
  std::vector<int> stack = successors(id);
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (seen[v]) continue;
    seen[v] = 1;
    if (layers[v].is_weighted()) {
      found.insert(v);
      continue;
    }
    for (int s : successors(v)) stack.push_back(s);
  }
  return std::vector<int>(found.begin(), found.end());
}

std::vector<int> NetworkGraph::prunable_layers() const {
  std::vector<int> out;
  for (const Layer& L : layers)
    if (L.prunable) out.push_back(L.id);
  return out;
}

std::pair<std::int64_t, std::int64_t> NetworkGraph::penalty_lambda_rational(
    int id) const {
  const Layer& L = layer(id);
  if (!L.is_weighted())
    throw std::invalid_argument("penalty is defined for conv/dense layers only");
  if (!L.prunable)
    throw std::invalid_argument("layer " + L.name + " is not prunable");
  const std::vector<int> cons = consumers(id);
  if (cons.empty())
    throw std::invalid_argument("layer " + L.name +
                                " has no consumers; pruning it would sever "
                                "the graph");
  std::int64_t num = static_cast<std::int64_t>(L.kh) * L.kw * L.cin;
  for (int c : cons) {
    const Layer& C = layers[c];
    num += static_cast<std::int64_t>(C.kh) * C.kw * C.cout;
  }
  num += static_cast<std::int64_t>(L.out_h) * L.out_w;
  const std::int64_t den = static_cast<std::int64_t>(input_h) * input_w;
  return {num, den};
}

double NetworkGraph::penalty_lambda(int id) const {
  auto [num, den] = penalty_lambda_rational(id);
  return static_cast<double>(num) / static_cast<double>(den);
}

std::int64_t NetworkGraph::count_params() const {
  std::int64_t total = 0;
  for (const Layer& L : layers) {
    if (!L.is_weighted()) continue;
    total += static_cast<std::int64_t>(L.kh) * L.kw * L.cin * L.cout;
    if (L.has_bias) total += L.cout;
    if (L.has_batchnorm) total += 4ll * L.cout;
  }
  return total;
}

std::int64_t NetworkGraph::count_flops() const {
  std::int64_t total = 0;
  for (const Layer& L : layers) {
    if (!L.is_weighted()) continue;
    const std::int64_t macs = static_cast<std::int64_t>(L.out_h) * L.out_w *
                              L.cout * L.kh * L.kw * L.cin;
    total += 2 * macs;
  }
  return total;
}

std::vector<ParamRef> NetworkGraph::parameters() {
  std::vector<ParamRef> out;
  for (Layer& L : layers) {
    if (!L.is_weighted()) continue;
    out.push_back({L.id, "kernel", &L.kernel, true});
    if (L.has_bias) out.push_back({L.id, "bias", &L.bias, true});
    if (L.has_batchnorm) {
      out.push_back({L.id, "gamma", &L.bn.gamma, true});
      out.push_back({L.id, "beta", &L.bn.beta, true});
      out.push_back({L.id, "moving_mean", &L.bn.moving_mean, false});
      out.push_back({L.id, "moving_var", &L.bn.moving_var, false});
    }
  }
  return out;
}

std::vector<ParamRef> NetworkGraph::trainable_parameters() {
  std::vector<ParamRef> all = parameters();
  std::vector<ParamRef> out;
  for (const ParamRef& p : all)
    if (p.trainable) out.push_back(p);
  return out;
}

Tensor NetworkGraph::forward(const Tensor& x) const {
  return forward_all(x)[output_layer()];
}

std::vector<Tensor> NetworkGraph::forward_all(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != input_h || x.dim(2) != input_w ||
      x.dim(3) != input_c)
    throw std::invalid_argument("forward input " + shape_to_string(x.shape()) +
                                " does not match graph input " +
                                std::to_string(input_h) + "x" +
                                std::to_string(input_w) + "x" +
                                std::to_string(input_c));
  std::vector<Tensor> vals(layers.size());
  for (const Layer& L : layers) {
    switch (L.kind) {
      case LayerKind::input:
        vals[L.id] = x;
        break;
      case LayerKind::conv:
      case LayerKind::dense: {
        Tensor y = ops::conv2d(vals[L.inputs[0]], L.kernel, L.stride, L.padding);
        if (L.has_bias) y = ops::add_channel_bias(y, L.bias);
        if (L.has_batchnorm) y = ops::batchnorm_infer(y, L.bn);
        vals[L.id] = std::move(y);
        break;
      }
      case LayerKind::pool:
        vals[L.id] = L.pool_kind == PoolKind::max
                         ? ops::maxpool(vals[L.inputs[0]], L.pool_k,
                                        L.pool_stride, L.pool_padding)
                         : ops::avgpool(vals[L.inputs[0]], L.pool_k,
                                        L.pool_stride, L.pool_padding);
        break;
      case LayerKind::relu:
        vals[L.id] = ops::relu(vals[L.inputs[0]]);
        break;
      case LayerKind::add_join:
        vals[L.id] = ops::add_join(vals[L.inputs[0]], vals[L.inputs[1]]);
        break;
      case LayerKind::output:
        vals[L.id] = vals[L.inputs[0]];
        break;
    }
  }
  return vals;
}

Tensor NetworkGraph::logits(const Tensor& x) const {
  Tensor out = forward(x);
  if (out.rank() != 4 || out.dim(1) != 1 || out.dim(2) != 1)
    throw std::invalid_argument(
        "output feature map " + shape_to_string(out.shape()) +
        " is not 1x1 spatially; this graph is not a classifier");
  return Tensor::from({out.dim(0), out.dim(3)}, out.values(), out.dtype());
}

TrainForward NetworkGraph::forward_train(Tape& tape, const Tensor& x) const {
  TrainForward fw;
  std::vector<NodeRef> vals(layers.size());
  for (const Layer& L : layers) {
    const std::string prefix = "L" + std::to_string(L.id) + ".";
    switch (L.kind) {
      case LayerKind::input:
        vals[L.id] = tape.leaf(x, false, "input");
        break;
      case LayerKind::conv:
      case LayerKind::dense: {
        NodeRef k = tape.leaf(L.kernel, true, prefix + "kernel");
        fw.params[k->name] = k;
        NodeRef y = ad::conv2d(tape, vals[L.inputs[0]], k, L.stride, L.padding);
        if (L.has_bias) {
          NodeRef b = tape.leaf(L.bias, true, prefix + "bias");
          fw.params[b->name] = b;
          y = ad::add_channel_bias(tape, y, b);
        }
        if (L.has_batchnorm) {
          NodeRef g = tape.leaf(L.bn.gamma, true, prefix + "gamma");
          NodeRef be = tape.leaf(L.bn.beta, true, prefix + "beta");
          fw.params[g->name] = g;
          fw.params[be->name] = be;
          ad::BnNode bn = ad::batchnorm_train(tape, y, g, be, L.bn);
          fw.moving_updates.emplace_back(
              L.id, std::make_pair(bn.new_moving_mean, bn.new_moving_var));
          y = bn.y;
        }
        vals[L.id] = y;
        break;
      }
      case LayerKind::pool:
        vals[L.id] = L.pool_kind == PoolKind::max
                         ? ad::maxpool(tape, vals[L.inputs[0]], L.pool_k,
                                       L.pool_stride, L.pool_padding)
                         : ad::avgpool(tape, vals[L.inputs[0]], L.pool_k,
                                       L.pool_stride, L.pool_padding);
        break;
      case LayerKind::relu:
        vals[L.id] = ad::relu(tape, vals[L.inputs[0]]);
        break;
      case LayerKind::add_join:
        vals[L.id] = ad::add_join(tape, vals[L.inputs[0]], vals[L.inputs[1]]);
        break;
      case LayerKind::output:
        vals[L.id] = vals[L.inputs[0]];
        break;
    }
  }
  NodeRef out = vals[output_layer()];
  if (out->value.rank() != 4 || out->value.dim(1) != 1 || out->value.dim(2) != 1)
    throw std::invalid_argument("training forward requires a classifier graph");
  fw.logits =
      ad::reshape(tape, out, {out->value.dim(0), out->value.dim(3)});
  return fw;
}

namespace {

/// Incremental graph assembly; tracks channel counts so conv layers can size
/// their kernels, and leaves spatial dims to infer_shapes().
struct Builder {
  NetworkGraph g;

  int add(Layer L) {
    L.id = g.num_layers();
    g.layers.push_back(std::move(L));
    return g.layers.back().id;
  }
  int channels(int id) const {
    const Layer& L = g.layers[id];
    if (L.kind == LayerKind::input) return g.input_c;
    if (L.is_weighted()) return L.cout;
    if (L.kind == LayerKind::add_join)
      return std::max(channels(L.inputs[0]), channels(L.inputs[1]));
    return channels(L.inputs[0]);
  }
  int input(int h, int w, int c) {
    g.input_h = h;
    g.input_w = w;
    g.input_c = c;
    Layer L;
    L.kind = LayerKind::input;
    L.name = "input";
    return add(L);
  }
  int conv(const std::string& name, int from, int kh, int kw, int cout,
           int stride, Padding pad, bool bn, bool bias, bool prunable,
           LayerKind kind = LayerKind::conv) {
    Layer L;
    L.kind = kind;
    L.name = name;
    L.inputs = {from};
    L.kh = kh;
    L.kw = kw;
    L.cin = channels(from);
    L.cout = cout;
    L.stride = stride;
    L.padding = pad;
    L.has_batchnorm = bn;
    L.has_bias = bias;
    L.prunable = prunable;
    L.kernel = Tensor({kh, kw, L.cin, cout});
    if (bias) L.bias = Tensor({cout});
    if (bn) L.bn = BatchNormParams::identity(cout);
    return add(L);
  }
  int dense(const std::string& name, int from, int kh, int kw, int cout,
            bool bn, bool bias, bool prunable) {
    return conv(name, from, kh, kw, cout, 1, Padding::valid, bn, bias,
                prunable, LayerKind::dense);
  }
  int relu(int from) {
    Layer L;
    L.kind = LayerKind::relu;
    L.name = "relu" + std::to_string(g.num_layers());
    L.inputs = {from};
    return add(L);
  }
  int pool(PoolKind kind, int from, int k, int stride, Padding pad) {
    Layer L;
    L.kind = LayerKind::pool;
    L.name = (kind == PoolKind::max ? "maxpool" : "avgpool") +
             std::to_string(g.num_layers());
    L.inputs = {from};
    L.pool_kind = kind;
    L.pool_k = k;
    L.pool_stride = stride;
    L.pool_padding = pad;
    return add(L);
  }
  int join(int a, int b) {
    Layer L;
    L.kind = LayerKind::add_join;
    L.name = "join" + std::to_string(g.num_layers());
    L.inputs = {a, b};
    return add(L);
  }
  int output(int from) {
    Layer L;
    L.kind = LayerKind::output;
    L.name = "output";
    L.inputs = {from};
    return add(L);
  }
  NetworkGraph finish(int classes, const std::string& preset) {
    g.num_classes = classes;
    g.preset = preset;
    g.infer_shapes();
    g.validate();
    return std::move(g);
  }
};

NetworkGraph build_convnet_table1() {
  Builder b;
  int cur = b.input(32, 32, 3);
  cur = b.conv("conv1", cur, 5, 5, 96, 1, Padding::same, true, false, true);
  cur = b.relu(cur);
  cur = b.pool(PoolKind::max, cur, 3, 2, Padding::same);  // 32 -> 16
  cur = b.conv("conv2", cur, 5, 5, 192, 1, Padding::same, true, false, true);
  cur = b.relu(cur);
  cur = b.pool(PoolKind::max, cur, 3, 2, Padding::same);  // 16 -> 8
  cur = b.conv("conv3", cur, 3, 3, 192, 1, Padding::same, true, false, true);
  cur = b.relu(cur);
  cur = b.pool(PoolKind::max, cur, 3, 2, Padding::same);  // 8 -> 4
  cur = b.dense("fc", cur, 4, 4, 384, true, false, true);
  cur = b.relu(cur);
  cur = b.dense("classifier", cur, 1, 1, 10, false, true, false);
  b.output(cur);
  return b.finish(10, "convnet_table1");
}

NetworkGraph build_resnet20() {
  Builder b;
  int cur = b.input(32, 32, 3);
  cur = b.conv("stem", cur, 3, 3, 16, 1, Padding::same, true, false, false);
  cur = b.relu(cur);
  const int widths[3] = {16, 32, 64};
  for (int group = 0; group < 3; ++group) {
    for (int block = 0; block < 3; ++block) {
      const std::string name =
          "g" + std::to_string(group + 1) + "b" + std::to_string(block + 1);
      const int c = widths[group];
      const int stride = (group > 0 && block == 0) ? 2 : 1;
      int a = b.conv(name + ".conv1", cur, 3, 3, c, stride, Padding::same,
                     true, false, true);
      a = b.relu(a);
      a = b.conv(name + ".conv2", a, 3, 3, c, 1, Padding::same, true, false,
                 false);
      // parameter-free shortcut: stride-2 subsample when the block
      // downsamples; narrower skips are zero-padded by add_join
      int skip = cur;
      if (stride == 2)
        skip = b.pool(PoolKind::max, cur, 1, 2, Padding::valid);
      cur = b.relu(b.join(a, skip));
    }
  }
  cur = b.pool(PoolKind::avg, cur, 3, 2, Padding::same);  // 8 -> 4
  cur = b.dense("fc", cur, 4, 4, 10, false, true, false);
  b.output(cur);
  return b.finish(10, "resnet20");
}

NetworkGraph build_mnist_small() {
  Builder b;
  int cur = b.input(28, 28, 1);
  cur = b.conv("conv1", cur, 5, 5, 8, 1, Padding::same, true, false, true);
  cur = b.relu(cur);
  cur = b.pool(PoolKind::max, cur, 3, 2, Padding::same);  // 28 -> 14
  cur = b.conv("conv2", cur, 5, 5, 16, 1, Padding::same, true, false, true);
  cur = b.relu(cur);
  cur = b.pool(PoolKind::max, cur, 3, 2, Padding::same);  // 14 -> 7
  cur = b.dense("fc", cur, 7, 7, 10, false, true, false);
  b.output(cur);
  return b.finish(10, "mnist_small");
}

}  // namespace

NetworkGraph build_preset(const std::string& name) {
  if (name == "convnet_table1") return build_convnet_table1();
  if (name == "resnet20") return build_resnet20();
  if (name == "mnist_small") return build_mnist_small();
  throw std::invalid_argument("unknown preset: " + name);
}

void initialize_parameters(NetworkGraph& g, Rng& rng) {
  for (Layer& L : g.layers) {
    if (!L.is_weighted()) continue;
    const double stddev =
        std::sqrt(2.0 / (static_cast<double>(L.kh) * L.kw * L.cin));
    L.kernel = rng.normal_tensor({L.kh, L.kw, L.cin, L.cout}, 0.0, stddev);
    if (L.has_bias) L.bias = Tensor({L.cout});
    if (L.has_batchnorm) {
      const double eps = L.bn.epsilon;
      const double mom = L.bn.momentum;
      L.bn = BatchNormParams::identity(L.cout, eps, mom);
    }
  }
}

double accuracy(const NetworkGraph& g, const Tensor& images,
                const std::vector<int>& labels, int batch_size) {
  if (images.rank() != 4 ||
      images.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("accuracy: images/labels mismatch");
  const int n = images.dim(0);
  const int h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::int64_t row = static_cast<std::int64_t>(h) * w * c;
  int correct = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int len = std::min(batch_size, n - start);
    Tensor batch({len, h, w, c}, images.dtype());
    std::copy(images.data() + start * row, images.data() + (start + len) * row,
              batch.data());
    Tensor out = g.logits(batch);
    const int classes = out.dim(1);
    for (int i = 0; i < len; ++i) {
      int best = 0;
      for (int k = 1; k < classes; ++k)
        if (out[i * classes + k] > out[i * classes + best]) best = k;
      if (best == labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace gprune
