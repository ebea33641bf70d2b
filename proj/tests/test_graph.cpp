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
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "gprune/graph.hpp"
#include "oracles.hpp"

using namespace gprune;

namespace {

int find_layer(const NetworkGraph& g, const std::string& name) {
  for (const Layer& L : g.layers)
    if (L.name == name) return L.id;
  FAIL("no layer named " << name);
  return -1;
}

// input -> convA(1x1, BN, prunable) -> convB(1x1, bias) -> output, on a
// configurable input patch; the smallest penalty_lambda configuration.
NetworkGraph tiny_chain(int h, int w) {
  NetworkGraph g;
  g.input_h = h;
  g.input_w = w;
  g.input_c = 1;
  Layer in;
  in.id = 0;
  in.kind = LayerKind::input;
  in.name = "input";
  g.layers.push_back(in);
  Layer a;
  a.id = 1;
  a.kind = LayerKind::conv;
  a.name = "convA";
  a.inputs = {0};
  a.kh = a.kw = a.cin = a.cout = 1;
  a.has_batchnorm = true;
  a.prunable = true;
  a.kernel = Tensor({1, 1, 1, 1});
  a.bn = BatchNormParams::identity(1);
  g.layers.push_back(a);
  Layer c;
  c.id = 2;
  c.kind = LayerKind::conv;
  c.name = "convB";
  c.inputs = {1};
  c.kh = c.kw = c.cin = c.cout = 1;
  c.has_bias = true;
  c.kernel = Tensor({1, 1, 1, 1});
  c.bias = Tensor({1});
  g.layers.push_back(c);
  Layer o;
  o.id = 3;
  o.kind = LayerKind::output;
  o.name = "output";
  o.inputs = {2};
  g.layers.push_back(o);
  g.infer_shapes();
  g.validate();
  return g;
}

}  // namespace

TEST_CASE("convnet preset matches the published layout") {
  NetworkGraph g = build_preset("convnet_table1");
  const int c1 = find_layer(g, "conv1");
  const int c2 = find_layer(g, "conv2");
  const int c3 = find_layer(g, "conv3");
  const int fc = find_layer(g, "fc");
  const int cls = find_layer(g, "classifier");
  CHECK(g.layer(c1).cout == 96);
  CHECK(g.layer(c2).cout == 192);
  CHECK(g.layer(c3).cout == 192);
  CHECK(g.layer(fc).cout == 384);
  CHECK(g.layer(c1).kh == 5);
  CHECK(g.layer(c2).kh == 5);
  CHECK(g.layer(c3).kh == 3);
  CHECK(g.layer(fc).kh == 4);
  CHECK(g.layer(cls).cout == 10);
  CHECK_FALSE(g.layer(cls).has_batchnorm);
  CHECK(g.layer(fc).has_batchnorm);
  // feature-map sizes after each 3x3 stride-2 pool
  CHECK(g.layer(c1).out_h == 32);
  CHECK(g.layer(c2).out_h == 16);
  CHECK(g.layer(c3).out_h == 8);
  CHECK(g.layer(fc).out_h == 1);

  SUBCASE("consumer relation follows the layer listing") {
    CHECK(g.consumers(c1) == std::vector<int>{c2});
    CHECK(g.consumers(c2) == std::vector<int>{c3});
    CHECK(g.consumers(c3) == std::vector<int>{fc});
    CHECK(g.consumers(fc) == std::vector<int>{cls});
    CHECK(g.consumers(cls).empty());
  }
}

TEST_CASE("penalty on the convnet preset equals the hand-derived rationals") {
  NetworkGraph g = build_preset("convnet_table1");
  const int c1 = find_layer(g, "conv1");
  const int c3 = find_layer(g, "conv3");
  auto [n1, d1] = g.penalty_lambda_rational(c1);
  CHECK(n1 == 5899);  // 5*5*3 + 5*5*192 + 32*32
  CHECK(d1 == 1024);
  auto [n3, d3] = g.penalty_lambda_rational(c3);
  CHECK(n3 == 7936);  // 3*3*192 + 4*4*384 + 8*8
  CHECK(d3 == 1024);
  CHECK(std::fabs(g.penalty_lambda(c1) - 5899.0 / 1024.0) <= 1e-12);
  CHECK(std::fabs(g.penalty_lambda(c3) - 7.75) <= 1e-12);
}

TEST_CASE("penalty smallest case: 1x1 conv with a single 1x1 consumer") {
  NetworkGraph g = tiny_chain(3, 5);
  auto [num, den] = g.penalty_lambda_rational(1);
  CHECK(num == 1 + 1 + 15);
  CHECK(den == 15);
}

TEST_CASE("penalty rejects a layer with no consumers") {
  NetworkGraph g = tiny_chain(3, 3);
  // convB feeds only the output marker; force the query anyway
  g.layers[2].prunable = true;
  CHECK_THROWS_AS(g.penalty_lambda(2), std::invalid_argument);
}

TEST_CASE("penalty grows when a consumer widens") {
  NetworkGraph narrow = tiny_chain(4, 4);
  NetworkGraph wide = tiny_chain(4, 4);
  Layer& c = wide.layers[2];
  c.cout = 2;
  c.kernel = Tensor({1, 1, 1, 2});
  c.bias = Tensor({2});
  wide.infer_shapes();
  CHECK(wide.penalty_lambda(1) > narrow.penalty_lambda(1));
  CHECK(narrow.penalty_lambda(1) > 0.0);
}

TEST_CASE("layer feeding an add_join sees both branch convs as consumers") {
  NetworkGraph g;
  g.input_h = g.input_w = 4;
  g.input_c = 2;
  auto push = [&](Layer L) {
    L.id = g.num_layers();
    g.layers.push_back(L);
    return L.id;
  };
  Layer in;
  in.kind = LayerKind::input;
  in.name = "input";
  const int i0 = push(in);
  Layer l;
  l.kind = LayerKind::conv;
  l.name = "conv_l";
  l.inputs = {i0};
  l.kh = l.kw = 3;
  l.cin = 2;
  l.cout = 4;
  l.padding = Padding::same;
  l.has_batchnorm = true;
  l.prunable = true;
  l.kernel = Tensor({3, 3, 2, 4});
  l.bn = BatchNormParams::identity(4);
  const int lc = push(l);
  Layer r;
  r.kind = LayerKind::relu;
  r.name = "relu_l";
  r.inputs = {lc};
  const int rl = push(r);
  Layer j;
  j.kind = LayerKind::add_join;
  j.name = "join";
  j.inputs = {rl, i0};
  const int jn = push(j);
  auto branch = [&](const std::string& name, int k, int cout) {
    Layer c;
    c.kind = LayerKind::conv;
    c.name = name;
    c.inputs = {jn};
    c.kh = c.kw = k;
    c.cin = 4;
    c.cout = cout;
    c.padding = Padding::same;
    c.has_batchnorm = true;
    c.kernel = Tensor({k, k, 4, cout});
    c.bn = BatchNormParams::identity(cout);
    return push(c);
  };
  const int p = branch("conv_p", 1, 3);
  const int q = branch("conv_q", 3, 5);
  Layer j2;
  j2.kind = LayerKind::add_join;
  j2.name = "join2";
  j2.inputs = {p, q};
  const int m = push(j2);
  Layer o;
  o.kind = LayerKind::output;
  o.name = "output";
  o.inputs = {m};
  push(o);
  g.infer_shapes();
  g.validate();
  CHECK(g.consumers(lc) == std::vector<int>{p, q});
}

TEST_CASE("param counting") {
  SUBCASE("single dense 10->10 with bias and no BN is 110 params") {
    NetworkGraph g;
    g.input_h = g.input_w = 1;
    g.input_c = 10;
    Layer in;
    in.id = 0;
    in.kind = LayerKind::input;
    in.name = "input";
    g.layers.push_back(in);
    Layer d;
    d.id = 1;
    d.kind = LayerKind::dense;
    d.name = "fc";
    d.inputs = {0};
    d.kh = d.kw = 1;
    d.cin = d.cout = 10;
    d.has_bias = true;
    d.kernel = Tensor({1, 1, 10, 10});
    d.bias = Tensor({10});
    g.layers.push_back(d);
    Layer o;
    o.id = 2;
    o.kind = LayerKind::output;
    o.name = "output";
    o.inputs = {1};
    g.layers.push_back(o);
    g.infer_shapes();
    g.validate();
    CHECK(g.count_params() == 110);
    CHECK(g.count_flops() == 200);
  }

  SUBCASE("convnet preset lands inside the published band") {
    NetworkGraph g = build_preset("convnet_table1");
    CHECK(g.count_params() == 1986730);
    CHECK(std::fabs(static_cast<double>(g.count_params()) - 1986760.0) /
              1986760.0 <=
          0.005);
  }

  SUBCASE("resnet20 preset lands inside the published band") {
    NetworkGraph g = build_preset("resnet20");
    CHECK(g.count_params() == 280698);
    CHECK(std::fabs(static_cast<double>(g.count_params()) - 281304.0) /
              281304.0 <=
          0.005);
  }
}

TEST_CASE("resnet20 structure") {
  NetworkGraph g = build_preset("resnet20");
  std::vector<int> prunable = g.prunable_layers();
  REQUIRE(prunable.size() == 9);
  const std::vector<int> want = {16, 16, 16, 32, 32, 32, 64, 64, 64};
  for (size_t i = 0; i < prunable.size(); ++i) {
    const Layer& L = g.layer(prunable[i]);
    CHECK(L.cout == want[i]);
    CHECK(L.kh == 3);
    // each block's first conv feeds exactly its second conv
    std::vector<int> cons = g.consumers(prunable[i]);
    REQUIRE(cons.size() == 1);
    CHECK(g.layer(cons[0]).name.ends_with(".conv2"));
  }
  CHECK_FALSE(g.layer(find_layer(g, "stem")).prunable);
  CHECK_FALSE(g.layer(find_layer(g, "g1b1.conv2")).prunable);

  SUBCASE("forward produces 10 logits per sample") {
    Rng rng(5);
    initialize_parameters(g, rng);
    Tensor x = rng.normal_tensor({2, 32, 32, 3}, 0.0, 1.0);
    Tensor out = g.logits(x);
    CHECK(out.shape() == std::vector<int>{2, 10});
    CHECK(out.all_finite());
  }
}

TEST_CASE("mnist_small structure and training forward") {
  NetworkGraph g = build_preset("mnist_small");
  int weighted = 0, with_bn = 0;
  for (const Layer& L : g.layers) {
    if (L.is_weighted()) {
      ++weighted;
      if (L.has_batchnorm) ++with_bn;
    }
  }
  CHECK(weighted == 3);
  CHECK(with_bn == 2);
  CHECK(g.prunable_layers().size() == 2);

  Rng rng(11);
  initialize_parameters(g, rng);
  Tensor x = rng.normal_tensor({4, 28, 28, 1}, 0.0, 1.0);

  SUBCASE("training forward exposes every trainable parameter as a leaf") {
    Tape tape;
    TrainForward fw = g.forward_train(tape, x);
    CHECK(fw.logits->value.shape() == std::vector<int>{4, 10});
    for (const ParamRef& p : g.trainable_parameters())
      CHECK(fw.params.count(p.name()) == 1);
    CHECK(fw.moving_updates.size() == 2);
    auto loss = ad::softmax_cross_entropy(tape, fw.logits, {0, 1, 2, 3});
    auto grads = tape.gradient_map(loss);
    for (const ParamRef& p : g.trainable_parameters()) {
      REQUIRE(grads.count(p.name()) == 1);
      CHECK(grads.at(p.name()).same_shape(*p.tensor));
    }
  }

  SUBCASE("initialization is deterministic in the seed") {
    NetworkGraph g2 = build_preset("mnist_small");
    Rng rng2(11);
    initialize_parameters(g2, rng2);
    const int c1 = find_layer(g, "conv1");
    CHECK(oracle::max_abs_diff(g.layer(c1).kernel, g2.layer(c1).kernel) == 0.0);
  }

  SUBCASE("accuracy of an untrained net is finite and in range") {
    std::vector<int> labels = {1, 2, 3, 4};
    double acc = accuracy(g, x, labels, 2);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}

TEST_CASE("unknown preset name is rejected") {
  CHECK_THROWS_AS(build_preset("lenet"), std::invalid_argument);
}

TEST_CASE("validation rejects a batch-normalized classifier") {
  NetworkGraph g = tiny_chain(2, 2);
  g.num_classes = 1;  // declared classifier; feature graphs are exempt
  Layer& cls = g.layers[2];
  cls.has_bias = false;
  cls.has_batchnorm = true;
  cls.bn = BatchNormParams::identity(1);
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}
