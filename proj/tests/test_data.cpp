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
#include "gprune/data.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "gprune/graph.hpp"
#include "gprune/ista.hpp"
#include "gprune/ops.hpp"
#include "gprune/prune.hpp"
#include "gprune/tensor.hpp"
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

Tensor byte_valued_images(int n, int h, int w) {
  Tensor t({n, h, w, 1});
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<double>((i * 7 + 3) % 256) / 255.0;
  return t;
}

}  // namespace

TEST_CASE("idx files round trip images and labels") {
  TempDir tmp("idx_roundtrip");
  const Tensor images = byte_valued_images(3, 5, 4);
  save_idx_images(tmp.path("img.idx"), images);
  const Tensor back = load_idx_images(tmp.path("img.idx"));
  CHECK(tensors_bitwise_equal(back, images));

  const std::vector<int> labels = {0, 9, 4, 255, 17};
  save_idx_labels(tmp.path("lab.idx"), labels);
  CHECK(load_idx_labels(tmp.path("lab.idx")) == labels);

  const std::vector<unsigned char> raw = slurp(tmp.path("img.idx"));
  REQUIRE(raw.size() == 16 + 3 * 5 * 4);
  // Big-endian header: magic 0x00000803, then N, rows, cols.
  CHECK(raw[2] == 0x08);
  CHECK(raw[3] == 0x03);
  CHECK(raw[7] == 3);
  CHECK(raw[11] == 5);
  CHECK(raw[15] == 4);
}

TEST_CASE("idx loader rejects a bad magic number") {
  TempDir tmp("idx_magic");
  save_idx_labels(tmp.path("lab.idx"), {1, 2, 3});
  CHECK_THROWS_WITH_AS(load_idx_images(tmp.path("lab.idx")),
                       doctest::Contains("bad IDX magic 0x00000801"),
                       IoError);
  save_idx_images(tmp.path("img.idx"), byte_valued_images(2, 3, 3));
  CHECK_THROWS_WITH_AS(load_idx_labels(tmp.path("img.idx")),
                       doctest::Contains("bad IDX magic 0x00000803"),
                       IoError);

  std::vector<unsigned char> raw = slurp(tmp.path("img.idx"));
  raw[2] = 0x0d;
  spit(tmp.path("bad.idx"), raw);
  CHECK_THROWS_WITH_AS(load_idx_images(tmp.path("bad.idx")),
                       doctest::Contains("expected 0x00000803"), IoError);
  CHECK_THROWS_AS(load_idx_images(tmp.path("missing.idx")), IoError);
}

TEST_CASE("idx loader reports truncation with the failing byte offset") {
  TempDir tmp("idx_trunc");
  save_idx_images(tmp.path("img.idx"), byte_valued_images(2, 4, 4));
  std::vector<unsigned char> raw = slurp(tmp.path("img.idx"));
  REQUIRE(raw.size() == 16 + 32);

  std::vector<unsigned char> cut(raw.begin(), raw.begin() + 30);
  spit(tmp.path("cut.idx"), cut);
  CHECK_THROWS_WITH_AS(load_idx_images(tmp.path("cut.idx")),
                       doctest::Contains("failed at byte offset 30"), IoError);

  std::vector<unsigned char> header_only(raw.begin(), raw.begin() + 9);
  spit(tmp.path("hdr.idx"), header_only);
  CHECK_THROWS_WITH_AS(load_idx_images(tmp.path("hdr.idx")),
                       doctest::Contains("expected 16 header bytes"), IoError);

  std::vector<unsigned char> extra = raw;
  extra.push_back(0);
  extra.push_back(0);
  spit(tmp.path("extra.idx"), extra);
  CHECK_THROWS_WITH_AS(load_idx_images(tmp.path("extra.idx")),
                       doctest::Contains("2 trailing bytes"), IoError);
}

TEST_CASE("mnist pair loads with matching counts and label range") {
  TempDir tmp("mnist");
  const int n = 12;
  Tensor images({n, 28, 28, 1});
  for (std::int64_t i = 0; i < images.size(); ++i)
    images[i] = static_cast<double>(i % 256) / 255.0;
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % 10;
  save_idx_images(tmp.path("img.idx"), images);
  save_idx_labels(tmp.path("lab.idx"), labels);

  const Dataset d =
      load_mnist(tmp.path("img.idx"), tmp.path("lab.idx"), "train");
  CHECK(d.size() == n);
  CHECK(d.images.shape() == std::vector<int>{n, 28, 28, 1});
  CHECK(d.labels == labels);
  CHECK(d.num_classes == 10);
  CHECK(d.split == "train");

  save_idx_labels(tmp.path("big.idx"), {3, 12, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_THROWS_WITH_AS(
      load_mnist(tmp.path("img.idx"), tmp.path("big.idx")),
      doctest::Contains("bad label 12 at index 1"), IoError);

  save_idx_labels(tmp.path("short.idx"), {1, 2, 3});
  CHECK_THROWS_WITH_AS(load_mnist(tmp.path("img.idx"), tmp.path("short.idx")),
                       doctest::Contains("pair mismatch"), IoError);
}

TEST_CASE("cifar10 records decode channel planes to NHWC") {
  TempDir tmp("cifar");
  const int n = 4;
  std::vector<unsigned char> raw(static_cast<size_t>(n) * 3073);
  for (int i = 0; i < n; ++i) {
    raw[static_cast<size_t>(i) * 3073] = static_cast<unsigned char>(i * 3 % 10);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          raw[static_cast<size_t>(i) * 3073 + 1 + (c * 32 + y) * 32 + x] =
              static_cast<unsigned char>((i + c * 31 + y * 7 + x * 13) % 256);
  }
  spit(tmp.path("batch.bin"), raw);

  const Dataset d = load_cifar10(tmp.path("batch.bin"), "test");
  CHECK(d.size() == n);
  CHECK(d.images.shape() == std::vector<int>{n, 32, 32, 3});
  CHECK(d.split == "test");
  for (int i = 0; i < n; ++i) CHECK(d.labels[i] == i * 3 % 10);
  bool all_match = true;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        for (int c = 0; c < 3; ++c)
          all_match =
              all_match &&
              bits_equal(d.images[((std::int64_t(i) * 32 + y) * 32 + x) * 3 + c],
                         ((i + c * 31 + y * 7 + x * 13) % 256) / 255.0);
  CHECK(all_match);

  std::vector<unsigned char> cut(raw.begin(), raw.begin() + 2 * 3073 + 100);
  spit(tmp.path("cut.bin"), cut);
  CHECK_THROWS_WITH_AS(load_cifar10(tmp.path("cut.bin")),
                       doctest::Contains("failed at byte offset 6146"),
                       IoError);

  raw[3073] = 10;  // label byte of record 1
  spit(tmp.path("badlabel.bin"), raw);
  CHECK_THROWS_WITH_AS(load_cifar10(tmp.path("badlabel.bin")),
                       doctest::Contains("bad label 10 in record 1"), IoError);
}

TEST_CASE("standardization gives zero mean and unit variance per channel") {
  Rng rng(31);
  Tensor images = rng.uniform_tensor({50, 6, 5, 3}, 0.0, 1.0);
  for (std::int64_t i = 0; i < images.size(); ++i)
    images[i] += 0.5 * (i % 3);  // distinct per-channel offsets

  const ChannelStats stats = channel_stats(images);
  REQUIRE(stats.channels() == 3);
  const Tensor out = standardize(images, stats);
  const ChannelStats after = channel_stats(out);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(after.mean[c]) <= 1e-6);
    const double var = after.stddev[c] * after.stddev[c];
    CHECK(var >= 1.0 - 1e-4);
    CHECK(var <= 1.0 + 1e-4);
  }

  ChannelStats wrong = stats;
  wrong.mean.pop_back();
  wrong.stddev.pop_back();
  CHECK_THROWS_AS(standardize(images, wrong), std::invalid_argument);
}

TEST_CASE("augmentation with every step off is the identity") {
  Rng rng(5);
  const Tensor batch = rng.uniform_tensor({4, 7, 7, 2}, -1.0, 2.0);
  const ChannelStats stats = channel_stats(batch);

  AugmentConfig off;
  off.pad_crop = off.flip = off.brightness = off.contrast = false;
  off.standardize = false;
  Rng r1(9);
  CHECK(tensors_bitwise_equal(augment(batch, off, stats, r1), batch));

  AugmentConfig only_std = off;
  only_std.standardize = true;
  Rng r2(9);
  CHECK(tensors_bitwise_equal(augment(batch, only_std, stats, r2),
                              standardize(batch, stats)));
}

TEST_CASE("a fixed seed reproduces the augmented batch bitwise") {
  Rng rng(6);
  const Tensor batch = rng.uniform_tensor({6, 10, 10, 1}, 0.0, 1.0);
  const ChannelStats stats = channel_stats(batch);
  AugmentConfig cfg;
  cfg.pad_to = 14;
  cfg.crop = 10;

  Rng ra(123), rb(123), rc(124);
  const Tensor a = augment(batch, cfg, stats, ra);
  const Tensor b = augment(batch, cfg, stats, rb);
  const Tensor c = augment(batch, cfg, stats, rc);
  CHECK(tensors_bitwise_equal(a, b));
  CHECK_FALSE(tensors_bitwise_equal(a, c));
}

TEST_CASE("pad then crop always yields the configured spatial size") {
  Rng rng(8);
  const Tensor batch = rng.uniform_tensor({20, 28, 28, 1}, 0.0, 1.0);
  AugmentConfig cfg;
  cfg.pad_to = 40;
  cfg.crop = 32;
  cfg.flip = cfg.brightness = cfg.contrast = cfg.standardize = false;
  for (int trial = 0; trial < 5; ++trial) {
    Rng r(trial);
    const Tensor out = augment(batch, cfg, {}, r);
    CHECK(out.shape() == std::vector<int>{20, 32, 32, 1});
  }

  // Cropping the whole padded canvas is deterministic: the image sits
  // centered with a zero border of 6 on every side.
  AugmentConfig full = cfg;
  full.crop = 40;
  Rng r(0);
  const Tensor canvas = augment(batch, full, {}, r);
  REQUIRE(canvas.shape() == std::vector<int>{20, 40, 40, 1});
  bool layout_ok = true;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool inside = y >= 6 && y < 34 && x >= 6 && x < 34;
      const double got = canvas[(std::int64_t(0) * 40 + y) * 40 + x];
      const double want =
          inside ? batch[(std::int64_t(0) * 28 + (y - 6)) * 28 + (x - 6)]
                 : 0.0;
      layout_ok = layout_ok && bits_equal(got, want);
    }
  CHECK(layout_ok);
}

TEST_CASE("crops larger than the padded image are rejected") {
  Rng rng(3);
  const Tensor batch = rng.uniform_tensor({2, 8, 8, 1}, 0.0, 1.0);
  AugmentConfig cfg;
  cfg.pad_to = 12;
  cfg.crop = 13;
  Rng r(0);
  CHECK_THROWS_WITH_AS(augment(batch, cfg, {}, r),
                       doctest::Contains("exceeds the padded size"),
                       std::invalid_argument);

  AugmentConfig small;
  small.pad_to = 6;
  small.crop = 6;
  CHECK_THROWS_WITH_AS(augment(batch, small, {}, r),
                       doctest::Contains("cannot pad"), std::invalid_argument);
}

TEST_CASE("flips mirror columns and occur for some seeds only") {
  Rng rng(4);
  const Tensor batch = rng.uniform_tensor({1, 5, 6, 1}, 0.0, 1.0);
  AugmentConfig cfg;
  cfg.pad_crop = cfg.brightness = cfg.contrast = cfg.standardize = false;
  cfg.flip = true;

  int flipped = 0, kept = 0;
  for (int s = 0; s < 64; ++s) {
    Rng r(s);
    const Tensor out = augment(batch, cfg, {}, r);
    bool is_id = true, is_mirror = true;
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        const double got = out[std::int64_t(y) * 6 + x];
        is_id = is_id && bits_equal(got, batch[std::int64_t(y) * 6 + x]);
        is_mirror =
            is_mirror && bits_equal(got, batch[std::int64_t(y) * 6 + (5 - x)]);
      }
    CHECK((is_id || is_mirror));
    flipped += is_mirror ? 1 : 0;
    kept += is_id ? 1 : 0;
  }
  CHECK(flipped > 0);
  CHECK(kept > 0);
}

TEST_CASE("brightness shifts uniformly and contrast scales about the mean") {
  Rng rng(12);
  const Tensor batch = rng.uniform_tensor({3, 6, 6, 2}, 0.0, 1.0);

  AugmentConfig bright;
  bright.pad_crop = bright.flip = bright.contrast = bright.standardize = false;
  bright.brightness = true;
  Rng rb(7);
  const Tensor shifted = augment(batch, bright, {}, rb);
  for (int i = 0; i < 3; ++i) {
    double lo = 1e300, hi = -1e300;
    for (int j = 0; j < 72; ++j) {
      const double d = shifted[std::int64_t(i) * 72 + j] -
                       batch[std::int64_t(i) * 72 + j];
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    CHECK(hi - lo <= 1e-12);  // one shift per image
    CHECK(std::abs(hi) <= 0.2 + 1e-12);
  }

  AugmentConfig contrast;
  contrast.pad_crop = contrast.flip = contrast.brightness =
      contrast.standardize = false;
  contrast.contrast = true;
  Rng rc(7);
  const Tensor scaled = augment(batch, contrast, {}, rc);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 2; ++c) {
      double mean_in = 0.0, mean_out = 0.0;
      for (int p = 0; p < 36; ++p) {
        mean_in += batch[(std::int64_t(i) * 36 + p) * 2 + c];
        mean_out += scaled[(std::int64_t(i) * 36 + p) * 2 + c];
      }
      mean_in /= 36.0;
      mean_out /= 36.0;
      CHECK(std::abs(mean_out - mean_in) <= 1e-9);

      // The centered values share one scale factor inside [0.8, 1.2].
      double factor = 0.0;
      bool factor_set = false;
      for (int p = 0; p < 36; ++p) {
        const double num =
            scaled[(std::int64_t(i) * 36 + p) * 2 + c] - mean_out;
        const double den = batch[(std::int64_t(i) * 36 + p) * 2 + c] - mean_in;
        if (std::abs(den) < 1e-6) continue;
        const double f = num / den;
        if (!factor_set) {
          factor = f;
          factor_set = true;
        }
        CHECK(f == doctest::Approx(factor).epsilon(1e-9));
      }
      REQUIRE(factor_set);
      CHECK(factor >= 0.8 - 1e-12);
      CHECK(factor <= 1.2 + 1e-12);
    }
}

TEST_CASE("two separable synthetic classes pass a nearest-centroid probe") {
  SynthSpec spec;
  spec.n = 400;
  spec.num_classes = 2;
  spec.height = spec.width = 12;
  spec.noise = 0.15;
  spec.center_jitter = 0.4;
  spec.seed = 5;
  const Dataset d = synth_dataset(spec);
  d.validate();
  REQUIRE(d.size() == 400);

  const int half = 200;
  const std::int64_t row = 12 * 12;
  std::vector<std::vector<double>> centroid(2, std::vector<double>(row, 0.0));
  std::vector<int> count(2, 0);
  for (int i = 0; i < half; ++i) {
    for (std::int64_t j = 0; j < row; ++j)
      centroid[d.labels[i]][j] += d.images[i * row + j];
    ++count[d.labels[i]];
  }
  for (int k = 0; k < 2; ++k)
    for (std::int64_t j = 0; j < row; ++j) centroid[k][j] /= count[k];

  int correct = 0;
  for (int i = half; i < 400; ++i) {
    double dist[2] = {0.0, 0.0};
    for (int k = 0; k < 2; ++k)
      for (std::int64_t j = 0; j < row; ++j) {
        const double delta = d.images[i * row + j] - centroid[k][j];
        dist[k] += delta * delta;
      }
    const int pred = dist[0] <= dist[1] ? 0 : 1;
    correct += pred == d.labels[i] ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / half >= 0.99);
}

TEST_CASE("synthetic data is bitwise reproducible in the seed") {
  SynthSpec spec;
  spec.n = 64;
  spec.num_classes = 3;
  spec.height = 9;
  spec.width = 7;
  spec.noise_channels = 1;
  spec.seed = 77;
  const Dataset a = synth_dataset(spec);
  const Dataset b = synth_dataset(spec);
  CHECK(tensors_bitwise_equal(a.images, b.images));
  CHECK(a.labels == b.labels);

  spec.seed = 78;
  const Dataset c = synth_dataset(spec);
  CHECK_FALSE(tensors_bitwise_equal(a.images, c.images));

  SynthSpec bad = spec;
  bad.num_classes = 1;
  CHECK_THROWS_AS(synth_dataset(bad), std::invalid_argument);
  bad = spec;
  bad.n = 0;
  CHECK_THROWS_AS(synth_dataset(bad), std::invalid_argument);
}

TEST_CASE("planted noise channels carry no class signal") {
  SynthSpec spec;
  spec.n = 800;
  spec.num_classes = 2;
  spec.height = spec.width = 12;
  spec.noise_channels = 2;
  spec.noise = 0.1;
  spec.center_jitter = 0.3;
  spec.seed = 21;
  const Dataset d = synth_dataset(spec);

  // Per-class per-pixel means; the signal channel separates at the blob
  // centers while the noise channels average out.
  const int c = 3, pixels = 12 * 12;
  std::vector<std::vector<double>> mean(
      2, std::vector<double>(static_cast<size_t>(pixels) * c, 0.0));
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < pixels * c; ++j)
      mean[d.labels[i]][j] += d.images[std::int64_t(i) * pixels * c + j];
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < pixels * c; ++j) mean[k][j] /= spec.n / 2.0;

  double max_diff[3] = {0.0, 0.0, 0.0};
  for (int p = 0; p < pixels; ++p)
    for (int ch = 0; ch < c; ++ch)
      max_diff[ch] = std::max(
          max_diff[ch], std::abs(mean[0][p * c + ch] - mean[1][p * c + ch]));
  CHECK(max_diff[0] >= 0.6);
  CHECK(max_diff[1] <= 0.45);
  CHECK(max_diff[2] <= 0.45);
}

TEST_CASE("sparsified training keeps the channels the signal needs") {
  SynthSpec spec;
  spec.n = 256;
  spec.num_classes = 2;
  spec.height = spec.width = 8;
  spec.noise = 0.1;
  spec.center_jitter = 0.3;
  spec.seed = 11;
  Dataset d = synth_dataset(spec);
  d.images = standardize(d.images, channel_stats(d.images));

  NetworkGraph g;
  g.input_h = g.input_w = 8;
  g.input_c = 1;
  g.num_classes = 2;
  Layer in;
  in.id = 0;
  in.kind = LayerKind::input;
  in.name = "input";
  g.layers.push_back(in);
  Layer conv;
  conv.id = 1;
  conv.kind = LayerKind::conv;
  conv.name = "conv1";
  conv.inputs = {0};
  conv.kh = conv.kw = 3;
  conv.cin = 1;
  conv.cout = 4;
  conv.has_batchnorm = true;
  conv.prunable = true;
  conv.bn = BatchNormParams::identity(4);
  conv.kernel = Tensor({3, 3, 1, 4});
  g.layers.push_back(conv);
  Layer act;
  act.id = 2;
  act.kind = LayerKind::relu;
  act.name = "relu1";
  act.inputs = {1};
  g.layers.push_back(act);
  Layer head;
  head.id = 3;
  head.kind = LayerKind::dense;
  head.name = "fc";
  head.inputs = {2};
  head.kh = head.kw = 6;
  head.cin = 4;
  head.cout = 2;
  head.has_bias = true;
  head.kernel = Tensor({6, 6, 4, 2});
  head.bias = Tensor({2});
  g.layers.push_back(head);
  Layer outl;
  outl.id = 4;
  outl.kind = LayerKind::output;
  outl.name = "output";
  outl.inputs = {3};
  g.layers.push_back(outl);
  g.infer_shapes();
  Rng rng(2);
  initialize_parameters(g, rng);
  g.validate();

  IstaConfig cfg;
  cfg.rho = 0.6;
  cfg.mu0 = 0.05;
  cfg.batch_size = 32;
  cfg.epochs = 14;
  cfg.plateau_window = 0;
  cfg.ema_decay = 0.0;
  const TrainResult result = train(g, d.images, d.labels, cfg, 3);
  const double sparsity = result.monitor.history.back().sparsity_fraction;
  CHECK(sparsity > 0.0);
  CHECK(sparsity < 1.0);

  const PruneMask mask = detect_constant_channels(g);
  const RewriteResult rewrite_out = rewrite(g, mask);
  CHECK(rewrite_out.graph.layer(1).cout >= 1);
  CHECK(accuracy(rewrite_out.graph, d.images, d.labels) >= 0.95);
}
