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
#include <random>
#include <string>
#include <vector>

namespace gprune {

enum class DType { f32, f64 };

std::string dtype_name(DType dt);
DType dtype_from_name(const std::string& name);

/// Dense row-major N-dimensional array. Images use (batch, height, width,
/// channel) layout; convolution kernels use (kh, kw, cin, cout).
///
/// Values are held as doubles regardless of dtype; the dtype tag controls
/// serialization width and, for f32, values are kept quantized to float
/// precision so that a 32-bit round trip is bit exact.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, DType dtype = DType::f64);

  static Tensor full(std::vector<int> shape, double value,
                     DType dtype = DType::f64);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     DType dtype = DType::f64);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  DType dtype() const { return dtype_; }
  Tensor astype(DType dt) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const {
    return data_[static_cast<size_t>(i)];
  }

  // Multi-index access, convenience for tests and cold paths.
  double& at(const std::vector<int>& idx);
  double at(const std::vector<int>& idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Re-rounds every value through float when dtype is f32; no-op for f64.
  void requantize();

 private:
  std::int64_t flat_index(const std::vector<int>& idx) const;

  std::vector<int> shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

/// Result dtype of an op combining the given operands: f32 only when every
/// operand is f32.
DType promote(std::initializer_list<DType> dts);

/// Seeded deterministic random source. One instance per logical stream; all
/// draws go through the owned engine so replaying a seed replays the values.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }
  std::mt19937_64& engine() { return engine_; }

  Tensor normal_tensor(std::vector<int> shape, double mean, double stddev,
                       DType dtype = DType::f64);
  Tensor uniform_tensor(std::vector<int> shape, double lo, double hi,
                        DType dtype = DType::f64);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 mix of a base seed and a stream tag, for deriving independent
/// sub-streams from one config seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace gprune
