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
#include <stdexcept>
#include <string>
#include <vector>

#include "gprune/tensor.hpp"

namespace gprune {

/// File and format failures: missing files, bad magic numbers, truncation,
/// checksum mismatches. Every loader either returns a complete dataset or
/// throws this; there are no partial results.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Global per-channel statistics of an image set. stddev is the square root
/// of the biased (population) variance, floored at 1e-12.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }
  int channels() const { return static_cast<int>(mean.size()); }
};

/// A labeled image set. Images are (N, H, W, C) with pixel values in [0, 1]
/// as loaded; stats is filled once the set has been standardized and then
/// records the statistics that were subtracted.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string split = "train";
  int num_classes = 0;
  ChannelStats stats;

  int size() const { return images.empty() ? 0 : images.dim(0); }
  void validate() const;
};

/// IDX codecs. Images use magic 0x00000803 (unsigned bytes, 3 dims) and load
/// as (N, rows, cols, 1) with values scaled to [0, 1]; labels use magic
/// 0x00000801. All header words are big-endian 32-bit. The writers emit the
/// same layout and exist for building fixtures.
Tensor load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);
void save_idx_images(const std::string& path, const Tensor& images);
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

/// MNIST: an IDX image file plus an IDX label file with matching counts and
/// labels in [0, 9].
Dataset load_mnist(const std::string& images_path,
                   const std::string& labels_path,
                   const std::string& split = "train");

/// One CIFAR-10 binary batch: 3073-byte records, each a label byte in [0, 9]
/// followed by 3072 pixel bytes in channel-planar order (1024 red, 1024
/// green, 1024 blue, each row-major 32x32). Decoded to (N, 32, 32, 3).
Dataset load_cifar10(const std::string& batch_path,
                     const std::string& split = "train");

/// Biased per-channel mean and stddev over every pixel of the set.
ChannelStats channel_stats(const Tensor& images);

/// (x - mean[c]) / stddev[c] per channel. The result has zero per-channel
/// mean and unit variance when stats came from the same images.
Tensor standardize(const Tensor& images, const ChannelStats& stats);

/// The training-time transform chain: zero-pad to pad_to, random crop,
/// random horizontal flip, random brightness shift, random contrast scale,
/// then standardization with the provided global statistics. Every step can
/// be switched off; with all five off the batch passes through unchanged.
struct AugmentConfig {
  bool pad_crop = true;
  int pad_to = 40;
  int crop = 32;
  bool flip = true;
  bool brightness = true;
  double brightness_delta = 0.2;  // shift drawn from [-delta, delta]
  bool contrast = true;
  double contrast_lo = 0.8;  // scale drawn from [lo, hi]
  double contrast_hi = 1.2;
  bool standardize = true;

  void validate() const;
};

/// Applies the enabled steps per image, drawing from rng in a fixed order
/// (crop row, crop col, flip, brightness, contrast), so a fixed generator
/// state reproduces the batch bitwise. stats may be empty only when the
/// standardize step is off.
Tensor augment(const Tensor& batch, const AugmentConfig& cfg,
               const ChannelStats& stats, Rng& rng);

/// Synthetic classification data: class k is a Gaussian intensity bump on
/// channel 0 centered at angle 2*pi*k/num_classes on a circle, with a
/// per-sample jittered center and additive pixel noise. Channels beyond the
/// first carry pure noise and no class information. Labels cycle 0..K-1, so
/// every prefix of the set is class-balanced to within one sample.
struct SynthSpec {
  int n = 256;
  int num_classes = 2;
  int height = 8;
  int width = 8;
  int noise_channels = 0;
  double noise = 0.1;        // pixel noise stddev
  double amplitude = 1.0;    // bump peak value
  double blob_sigma = 0.0;   // 0 derives min(height, width) / 10
  double center_jitter = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};
Dataset synth_dataset(const SynthSpec& spec);

}  // namespace gprune
