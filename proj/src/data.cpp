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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace gprune {
namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::int64_t kCifarRecordBytes = 3073;  // 1 label + 3 * 1024 pixels

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (in.bad()) throw IoError("read failure on " + path);
  return bytes;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::int64_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

/// The file must hold exactly `expected` bytes; shorter and longer files get
/// distinct diagnostics, the short one naming the offset where data ran out.
void check_exact_size(const std::string& path,
                      const std::vector<unsigned char>& bytes,
                      std::int64_t expected, const std::string& format) {
  const std::int64_t got = static_cast<std::int64_t>(bytes.size());
  if (got < expected)
    throw IoError("truncated " + format + " file " + path + ": expected " +
                  std::to_string(expected) + " bytes, got " +
                  std::to_string(got) + " (failed at byte offset " +
                  std::to_string(got) + ")");
  if (got > expected)
    throw IoError(format + " file " + path + " has " +
                  std::to_string(got - expected) +
                  " trailing bytes after the declared data");
}

void check_idx_header(const std::string& path,
                      const std::vector<unsigned char>& bytes,
                      std::int64_t header_bytes, std::uint32_t want_magic,
                      const std::string& role) {
  if (static_cast<std::int64_t>(bytes.size()) < 4)
    throw IoError("truncated IDX file " + path +
                  ": expected 4 magic bytes, got " +
                  std::to_string(bytes.size()) + " (failed at byte offset " +
                  std::to_string(bytes.size()) + ")");
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != want_magic)
    throw IoError("bad IDX magic " + hex32(magic) + " in " + path +
                  ": expected " + hex32(want_magic) + " (" + role + ")");
  if (static_cast<std::int64_t>(bytes.size()) < header_bytes)
    throw IoError("truncated IDX file " + path + ": expected " +
                  std::to_string(header_bytes) + " header bytes, got " +
                  std::to_string(bytes.size()) + " (failed at byte offset " +
                  std::to_string(bytes.size()) + ")");
}

}  // namespace

void Dataset::validate() const {
  if (images.empty() || images.rank() != 4)
    throw std::invalid_argument("dataset: images must be (N, H, W, C)");
  if (static_cast<int>(labels.size()) != images.dim(0))
    throw std::invalid_argument("dataset: label count " +
                                std::to_string(labels.size()) +
                                " does not match image count " +
                                std::to_string(images.dim(0)));
  if (num_classes < 1)
    throw std::invalid_argument("dataset: num_classes must be positive");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::invalid_argument(
          "dataset: label " + std::to_string(labels[i]) + " at index " +
          std::to_string(i) + " outside [0, " + std::to_string(num_classes) +
          ")");
}

Tensor load_idx_images(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  check_idx_header(path, bytes, 16, kIdxImagesMagic, "image file");
  const std::int64_t n = be32(bytes, 4);
  const std::int64_t rows = be32(bytes, 8);
  const std::int64_t cols = be32(bytes, 12);
  if (n <= 0 || rows <= 0 || cols <= 0)
    throw IoError("bad IDX dimensions " + std::to_string(n) + "x" +
                  std::to_string(rows) + "x" + std::to_string(cols) + " in " +
                  path);
  check_exact_size(path, bytes, 16 + n * rows * cols, "IDX");

  Tensor images({static_cast<int>(n), static_cast<int>(rows),
                 static_cast<int>(cols), 1});
  for (std::int64_t i = 0; i < n * rows * cols; ++i)
    images[i] = bytes[16 + i] / 255.0;
  return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  check_idx_header(path, bytes, 8, kIdxLabelsMagic, "label file");
  const std::int64_t n = be32(bytes, 4);
  if (n <= 0) throw IoError("bad IDX item count " + std::to_string(n) +
                            " in " + path);
  check_exact_size(path, bytes, 8 + n, "IDX");

  std::vector<int> labels(n);
  for (std::int64_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

void save_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(3) != 1)
    throw std::invalid_argument("save_idx_images: images must be (N, H, W, 1)");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(1)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  for (std::int64_t i = 0; i < images.size(); ++i) {
    const long v = std::lround(images[i] * 255.0);
    out.put(static_cast<char>(std::clamp(v, 0L, 255L)));
  }
  if (!out) throw IoError("write failure on " + path);
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) {
    if (v < 0 || v > 255)
      throw std::invalid_argument("save_idx_labels: label " +
                                  std::to_string(v) + " does not fit a byte");
    out.put(static_cast<char>(v));
  }
  if (!out) throw IoError("write failure on " + path);
}

Dataset load_mnist(const std::string& images_path,
                   const std::string& labels_path, const std::string& split) {
  Dataset d;
  d.images = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  d.split = split;
  d.num_classes = 10;
  if (static_cast<int>(d.labels.size()) != d.images.dim(0))
    throw IoError("MNIST pair mismatch: " + std::to_string(d.images.dim(0)) +
                  " images in " + images_path + " but " +
                  std::to_string(d.labels.size()) + " labels in " +
                  labels_path);
  for (size_t i = 0; i < d.labels.size(); ++i)
    if (d.labels[i] > 9)
      throw IoError("bad label " + std::to_string(d.labels[i]) +
                    " at index " + std::to_string(i) + " in " + labels_path +
                    ": MNIST labels lie in [0, 9]");
  d.validate();
  return d;
}

Dataset load_cifar10(const std::string& batch_path, const std::string& split) {
  const std::vector<unsigned char> bytes = read_file(batch_path);
  const std::int64_t got = static_cast<std::int64_t>(bytes.size());
  if (got == 0 || got % kCifarRecordBytes != 0)
    throw IoError("truncated CIFAR-10 file " + batch_path +
                  ": expected whole 3073-byte records, got " +
                  std::to_string(got) + " bytes (failed at byte offset " +
                  std::to_string((got / kCifarRecordBytes) *
                                 kCifarRecordBytes) +
                  ")");
  const std::int64_t n = got / kCifarRecordBytes;

  Dataset d;
  d.images = Tensor({static_cast<int>(n), 32, 32, 3});
  d.labels.resize(n);
  d.split = split;
  d.num_classes = 10;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t rec = i * kCifarRecordBytes;
    const int label = bytes[rec];
    if (label > 9)
      throw IoError("bad label " + std::to_string(label) + " in record " +
                    std::to_string(i) + " of " + batch_path +
                    ": CIFAR-10 labels lie in [0, 9]");
    d.labels[i] = label;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          d.images[((i * 32 + y) * 32 + x) * 3 + c] =
              bytes[rec + 1 + (c * 32 + y) * 32 + x] / 255.0;
  }
  d.validate();
  return d;
}

ChannelStats channel_stats(const Tensor& images) {
  if (images.empty() || images.rank() != 4)
    throw std::invalid_argument("channel_stats: images must be (N, H, W, C)");
  const int c = images.dim(3);
  const std::int64_t per_channel = images.size() / c;
  std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
  for (std::int64_t i = 0; i < images.size(); ++i) {
    const double v = images[i];
    sum[i % c] += v;
    sumsq[i % c] += v * v;
  }
  ChannelStats s;
  s.mean.resize(c);
  s.stddev.resize(c);
  for (int k = 0; k < c; ++k) {
    s.mean[k] = sum[k] / per_channel;
    const double var =
        std::max(0.0, sumsq[k] / per_channel - s.mean[k] * s.mean[k]);
    s.stddev[k] = std::max(std::sqrt(var), 1e-12);
  }
  return s;
}

Tensor standardize(const Tensor& images, const ChannelStats& stats) {
  if (images.empty() || images.rank() != 4)
    throw std::invalid_argument("standardize: images must be (N, H, W, C)");
  if (stats.channels() != images.dim(3))
    throw std::invalid_argument("standardize: stats cover " +
                                std::to_string(stats.channels()) +
                                " channels, images have " +
                                std::to_string(images.dim(3)));
  const int c = images.dim(3);
  Tensor out(images.shape(), images.dtype());
  for (std::int64_t i = 0; i < images.size(); ++i)
    out[i] = (images[i] - stats.mean[i % c]) / stats.stddev[i % c];
  out.requantize();
  return out;
}

void AugmentConfig::validate() const {
  if (pad_crop) {
    if (pad_to < 1 || crop < 1)
      throw std::invalid_argument("augment: pad_to and crop must be positive");
    if (crop > pad_to)
      throw std::invalid_argument("augment: crop size " +
                                  std::to_string(crop) +
                                  " exceeds the padded size " +
                                  std::to_string(pad_to));
  }
  if (brightness && brightness_delta < 0.0)
    throw std::invalid_argument("augment: brightness_delta must be >= 0");
  if (contrast && (contrast_lo <= 0.0 || contrast_hi < contrast_lo))
    throw std::invalid_argument("augment: contrast range must satisfy 0 < lo <= hi");
}

Tensor augment(const Tensor& batch, const AugmentConfig& cfg,
               const ChannelStats& stats, Rng& rng) {
  cfg.validate();
  if (batch.empty() || batch.rank() != 4)
    throw std::invalid_argument("augment: batch must be (N, H, W, C)");
  const int n = batch.dim(0), h = batch.dim(1), w = batch.dim(2),
            c = batch.dim(3);
  if (cfg.pad_crop && (h > cfg.pad_to || w > cfg.pad_to))
    throw std::invalid_argument("augment: cannot pad " + std::to_string(h) +
                                "x" + std::to_string(w) + " images to " +
                                std::to_string(cfg.pad_to) + "x" +
                                std::to_string(cfg.pad_to));
  if (cfg.standardize && stats.channels() != c)
    throw std::invalid_argument(
        "augment: standardization needs stats for " + std::to_string(c) +
        " channels, got " + std::to_string(stats.channels()));

  const int oh = cfg.pad_crop ? cfg.crop : h;
  const int ow = cfg.pad_crop ? cfg.crop : w;
  const int pad_top = cfg.pad_crop ? (cfg.pad_to - h) / 2 : 0;
  const int pad_left = cfg.pad_crop ? (cfg.pad_to - w) / 2 : 0;

  Tensor out({n, oh, ow, c}, batch.dtype());
  std::vector<double> img(static_cast<size_t>(oh) * ow * c);
  for (int i = 0; i < n; ++i) {
    if (cfg.pad_crop) {
      // Random window of the zero-padded canvas, realized directly as source
      // coordinates so the canvas is never materialized.
      const int top = static_cast<int>(rng.uniform_int(0, cfg.pad_to - oh));
      const int left = static_cast<int>(rng.uniform_int(0, cfg.pad_to - ow));
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const int sy = top + y - pad_top;
          const int sx = left + x - pad_left;
          const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
          for (int k = 0; k < c; ++k)
            img[(static_cast<size_t>(y) * ow + x) * c + k] =
                inside ? batch[((std::int64_t(i) * h + sy) * w + sx) * c + k]
                       : 0.0;
        }
    } else {
      for (std::int64_t j = 0; j < static_cast<std::int64_t>(img.size()); ++j)
        img[j] = batch[std::int64_t(i) * img.size() + j];
    }

    if (cfg.flip && rng.uniform() < 0.5) {
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow / 2; ++x)
          for (int k = 0; k < c; ++k)
            std::swap(img[(static_cast<size_t>(y) * ow + x) * c + k],
                      img[(static_cast<size_t>(y) * ow + (ow - 1 - x)) * c + k]);
    }

    if (cfg.brightness) {
      const double delta =
          rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
      for (double& v : img) v += delta;
    }

    if (cfg.contrast) {
      const double f = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
      std::vector<double> mean(c, 0.0);
      for (size_t j = 0; j < img.size(); ++j) mean[j % c] += img[j];
      for (int k = 0; k < c; ++k) mean[k] /= static_cast<double>(oh) * ow;
      for (size_t j = 0; j < img.size(); ++j)
        img[j] = mean[j % c] + f * (img[j] - mean[j % c]);
    }

    if (cfg.standardize)
      for (size_t j = 0; j < img.size(); ++j)
        img[j] = (img[j] - stats.mean[j % c]) / stats.stddev[j % c];

    std::copy(img.begin(), img.end(),
              out.data() + std::int64_t(i) * img.size());
  }
  out.requantize();
  return out;
}

void SynthSpec::validate() const {
  if (n < 1) throw std::invalid_argument("synth spec: n must be positive");
  if (num_classes < 2)
    throw std::invalid_argument("synth spec: need at least 2 classes");
  if (height < 4 || width < 4)
    throw std::invalid_argument("synth spec: images must be at least 4x4");
  if (noise_channels < 0)
    throw std::invalid_argument("synth spec: noise_channels must be >= 0");
  if (noise < 0.0 || amplitude <= 0.0 || blob_sigma < 0.0 ||
      center_jitter < 0.0)
    throw std::invalid_argument("synth spec: bad noise/amplitude/sigma/jitter");
}

Dataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  const int c = 1 + spec.noise_channels;
  const double sigma = spec.blob_sigma > 0.0
                           ? spec.blob_sigma
                           : std::min(spec.height, spec.width) / 10.0;
  const double radius = std::min(spec.height, spec.width) / 3.2;
  const double cy0 = (spec.height - 1) / 2.0;
  const double cx0 = (spec.width - 1) / 2.0;

  Dataset d;
  d.images = Tensor({spec.n, spec.height, spec.width, c});
  d.labels.resize(spec.n);
  d.split = "synth";
  d.num_classes = spec.num_classes;

  Rng rng(spec.seed);
  for (int i = 0; i < spec.n; ++i) {
    const int label = i % spec.num_classes;
    d.labels[i] = label;
    const double theta = 2.0 * std::numbers::pi * label / spec.num_classes;
    const double cy = cy0 + radius * std::sin(theta) +
                      (spec.center_jitter > 0.0
                           ? rng.normal(0.0, spec.center_jitter)
                           : 0.0);
    const double cx = cx0 + radius * std::cos(theta) +
                      (spec.center_jitter > 0.0
                           ? rng.normal(0.0, spec.center_jitter)
                           : 0.0);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        double v = spec.amplitude * std::exp(-d2 / (2.0 * sigma * sigma));
        if (spec.noise > 0.0) v += rng.normal(0.0, spec.noise);
        const std::int64_t base =
            ((std::int64_t(i) * spec.height + y) * spec.width + x) * c;
        d.images[base] = v;
        for (int k = 1; k < c; ++k) d.images[base + k] = rng.normal(0.0, 1.0);
      }
  }
  d.validate();
  return d;
}

}  // namespace gprune
