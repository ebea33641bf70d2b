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
#include "gprune/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "gprune/data.hpp"
#include "gprune/graph.hpp"
#include "gprune/ista.hpp"
#include "gprune/prune.hpp"
#include "gprune/tensor.hpp"
#include "netgen.hpp"
#include "tempdir.hpp"

namespace {

using namespace gprune;
using gprune::testing::TempDir;
using gprune::testing::slurp;
using gprune::testing::spit;

bool bits_equal(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool tensors_bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (!bits_equal(a[i], b[i])) return false;
  return true;
}

bool graphs_bitwise_equal(NetworkGraph a, NetworkGraph b) {
  if (a.num_layers() != b.num_layers()) return false;
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name() != pb[i].name()) return false;
    if (!tensors_bitwise_equal(*pa[i].tensor, *pb[i].tensor)) return false;
  }
  return true;
}

CheckpointMeta crooked_meta() {
  CheckpointMeta meta;
  meta.stage = "sparsified";
  meta.seed = 0xfeedfacecafebeefULL;
  meta.alpha_applied = 10.0;
  meta.config.rho = 1.0 / 3.0;
  meta.config.rho_warm = 0.1;
  meta.config.rho_warm_steps = 17;
  meta.config.mu0 = 0.07;
  meta.config.lr_decay = 0.97;
  meta.config.batch_size = 25;
  meta.config.epochs = 9;
  meta.config.momentum = 0.9;
  meta.monitor.chance_loss = std::log(10.0);
  for (int e = 0; e < 3; ++e) {
    EpochStats s;
    s.epoch = e;
    s.loss = 2.0 / (3 + e);
    s.sparsity_fraction = e / 7.0;
    s.lasso_term = std::sqrt(2.0) / (1 + e);
    s.lr = 0.07 * std::pow(0.97, e);
    meta.monitor.history.push_back(s);
  }
  return meta;
}

}  // namespace

TEST_CASE("checkpoint round trip reproduces parameters and forward bitwise") {
  NetworkGraph g = build_preset("mnist_small");
  Rng rng(40);
  initialize_parameters(g, rng);
  const CheckpointMeta meta = crooked_meta();

  TempDir tmp("ckpt_roundtrip");
  save_checkpoint(tmp.path("a.ckpt"), g, meta);
  Checkpoint back = load_checkpoint(tmp.path("a.ckpt"));

  CHECK(graphs_bitwise_equal(g, back.graph));
  CHECK(back.meta.stage == meta.stage);
  CHECK(back.meta.seed == meta.seed);
  CHECK(bits_equal(back.meta.alpha_applied, meta.alpha_applied));
  CHECK(bits_equal(back.meta.config.rho, meta.config.rho));
  CHECK(back.meta.config.rho_warm_steps == meta.config.rho_warm_steps);
  CHECK(bits_equal(back.meta.config.mu0, meta.config.mu0));
  CHECK(back.meta.config.batch_size == meta.config.batch_size);
  CHECK(bits_equal(back.meta.monitor.chance_loss, meta.monitor.chance_loss));
  REQUIRE(back.meta.monitor.history.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(bits_equal(back.meta.monitor.history[e].loss,
                     meta.monitor.history[e].loss));
    CHECK(bits_equal(back.meta.monitor.history[e].lasso_term,
                     meta.monitor.history[e].lasso_term));
    CHECK(bits_equal(back.meta.monitor.history[e].lr,
                     meta.monitor.history[e].lr));
  }

  const Tensor x = rng.uniform_tensor({2, 28, 28, 1}, 0.0, 1.0);
  CHECK(tensors_bitwise_equal(back.graph.forward(x), g.forward(x)));

  // Saving the loaded state again reproduces the file byte for byte.
  save_checkpoint(tmp.path("b.ckpt"), back.graph, back.meta);
  CHECK(slurp(tmp.path("a.ckpt")) == slurp(tmp.path("b.ckpt")));
}

TEST_CASE("random graphs survive the checkpoint round trip") {
  Rng rng(91);
  for (int trial = 0; trial < 6; ++trial) {
    NetworkGraph g = netgen::random_valid_net(rng);
    netgen::randomize(g, rng);
    CheckpointMeta meta;
    meta.stage = "init";
    meta.seed = trial;

    TempDir tmp("ckpt_rand");
    save_checkpoint(tmp.path("g.ckpt"), g, meta);
    Checkpoint back = load_checkpoint(tmp.path("g.ckpt"));
    CHECK(graphs_bitwise_equal(g, back.graph));
    const Tensor x =
        rng.uniform_tensor({2, g.input_h, g.input_w, g.input_c}, -1.0, 1.0);
    CHECK(tensors_bitwise_equal(back.graph.forward(x), g.forward(x)));
  }
}

TEST_CASE("float32 tensors keep their width through the checkpoint") {
  NetworkGraph g = build_preset("mnist_small");
  Rng rng(17);
  initialize_parameters(g, rng);
  for (Layer& l : g.layers)
    if (l.is_weighted()) {
      Tensor narrow(l.kernel.shape(), DType::f32);
      for (std::int64_t i = 0; i < narrow.size(); ++i) narrow[i] = l.kernel[i];
      narrow.requantize();
      l.kernel = narrow;
      break;
    }

  TempDir tmp("ckpt_f32");
  save_checkpoint(tmp.path("g.ckpt"), g, {});
  Checkpoint back = load_checkpoint(tmp.path("g.ckpt"));
  CHECK(graphs_bitwise_equal(g, back.graph));
  bool saw_f32 = false;
  for (const Layer& l : back.graph.layers)
    if (l.is_weighted()) {
      saw_f32 = l.kernel.dtype() == DType::f32;
      break;
    }
  CHECK(saw_f32);
}

TEST_CASE("magic and version lines are enforced") {
  TempDir tmp("ckpt_version");
  spit(tmp.path("junk.ckpt"), {'h', 'e', 'l', 'l', 'o', '\n'});
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("junk.ckpt")),
                       doctest::Contains("not a gprune checkpoint"), IoError);

  NetworkGraph g = build_preset("mnist_small");
  Rng rng(1);
  initialize_parameters(g, rng);
  save_checkpoint(tmp.path("ok.ckpt"), g, {});
  std::vector<unsigned char> bytes = slurp(tmp.path("ok.ckpt"));
  // The version digit is the last character of the first line.
  const size_t line_end =
      std::find(bytes.begin(), bytes.end(), '\n') - bytes.begin();
  bytes[line_end - 1] = '2';
  spit(tmp.path("v2.ckpt"), bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("v2.ckpt")),
                       doctest::Contains("unsupported checkpoint version 2"),
                       IoError);

  CHECK_THROWS_AS(load_checkpoint(tmp.path("missing.ckpt")), IoError);
}

TEST_CASE("a corrupted blob byte fails the checksum, never misloads") {
  NetworkGraph g = build_preset("mnist_small");
  Rng rng(2);
  initialize_parameters(g, rng);
  TempDir tmp("ckpt_crc");
  save_checkpoint(tmp.path("ok.ckpt"), g, {});

  std::vector<unsigned char> bytes = slurp(tmp.path("ok.ckpt"));
  bytes.back() ^= 0x40;
  spit(tmp.path("flip.ckpt"), bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("flip.ckpt")),
                       doctest::Contains("checksum mismatch"), IoError);

  std::vector<unsigned char> cut = slurp(tmp.path("ok.ckpt"));
  cut.resize(cut.size() - 3);
  spit(tmp.path("cut.ckpt"), cut);
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("cut.ckpt")),
                       doctest::Contains("truncated checkpoint"), IoError);

  std::vector<unsigned char> hdr = slurp(tmp.path("ok.ckpt"));
  const size_t line1 = std::find(hdr.begin(), hdr.end(), '\n') - hdr.begin();
  const size_t line2 =
      std::find(hdr.begin() + line1 + 1, hdr.end(), '\n') - hdr.begin();
  hdr[line2 + 1] = 'X';  // first byte of the JSON header
  spit(tmp.path("hdr.ckpt"), hdr);
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("hdr.ckpt")),
                       doctest::Contains("malformed checkpoint header"),
                       IoError);
}

TEST_CASE("stages are validated and preserved") {
  NetworkGraph g = build_preset("mnist_small");
  Rng rng(3);
  initialize_parameters(g, rng);
  TempDir tmp("ckpt_stage");

  CheckpointMeta meta;
  meta.stage = "warmup";
  CHECK_THROWS_WITH_AS(save_checkpoint(tmp.path("x.ckpt"), g, meta),
                       doctest::Contains("unknown stage"),
                       std::invalid_argument);

  for (const std::string& stage : checkpoint_stages()) {
    meta.stage = stage;
    save_checkpoint(tmp.path("s.ckpt"), g, meta);
    CHECK(load_checkpoint(tmp.path("s.ckpt")).meta.stage == stage);
  }

  // A same-length corruption of the stored stage string is caught.
  meta.stage = "sparsified";
  save_checkpoint(tmp.path("s.ckpt"), g, meta);
  std::vector<unsigned char> bytes = slurp(tmp.path("s.ckpt"));
  const std::string text(bytes.begin(), bytes.end());
  const size_t pos = text.find("sparsified");
  REQUIRE(pos != std::string::npos);
  bytes[pos + 5] = 'X';
  spit(tmp.path("bad.ckpt"), bytes);
  CHECK_THROWS_AS(load_checkpoint(tmp.path("bad.ckpt")), IoError);
}

TEST_CASE("a sparsified checkpoint chains into pruning unchanged") {
  NetworkGraph g = build_preset("mnist_small");
  Rng rng(4);
  initialize_parameters(g, rng);
  // Zero a few gamma coordinates so pruning has work to do.
  for (Layer& l : g.layers)
    if (l.prunable) {
      l.bn.gamma[0] = 0.0;
      l.bn.beta[0] = 0.4;
      break;
    }

  CheckpointMeta meta;
  meta.stage = "sparsified";
  meta.seed = 9;
  TempDir tmp("ckpt_chain");
  save_checkpoint(tmp.path("sparse.ckpt"), g, meta);
  Checkpoint loaded = load_checkpoint(tmp.path("sparse.ckpt"));
  CHECK(graphs_bitwise_equal(g, loaded.graph));

  const PruneMask mask = detect_constant_channels(loaded.graph);
  RewriteResult pruned = rewrite(loaded.graph, mask);
  CheckpointMeta pruned_meta = loaded.meta;
  pruned_meta.stage = "pruned";
  save_checkpoint(tmp.path("pruned.ckpt"), pruned.graph, pruned_meta);
  Checkpoint back = load_checkpoint(tmp.path("pruned.ckpt"));
  CHECK(back.meta.stage == "pruned");
  CHECK(graphs_bitwise_equal(pruned.graph, back.graph));

  const Tensor x = rng.uniform_tensor({2, 28, 28, 1}, 0.0, 1.0);
  CHECK(tensors_bitwise_equal(back.graph.forward(x), pruned.graph.forward(x)));
}
