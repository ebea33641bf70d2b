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
#include "gprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gprune {

std::string dtype_name(DType dt) {
  return dt == DType::f32 ? "float32" : "float64";
}

DType dtype_from_name(const std::string& name) {
  if (name == "float32") return DType::f32;
  if (name == "float64") return DType::f64;
  throw std::invalid_argument("unknown dtype: " + name);
}

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("non-positive dim in shape " +
                                  shape_to_string(shape));
    }
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

DType promote(std::initializer_list<DType> dts) {
  for (DType dt : dts) {
    if (dt == DType::f64) return DType::f64;
  }
  return DType::f32;
}

Tensor::Tensor(std::vector<int> shape, DType dtype)
    : shape_(std::move(shape)),
      data_(static_cast<size_t>(shape_numel(shape_)), 0.0),
      dtype_(dtype) {}

Tensor Tensor::full(std::vector<int> shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  std::fill(t.data_.begin(), t.data_.end(), value);
  t.requantize();
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    DType dtype) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw std::invalid_argument(
        "value count " + std::to_string(values.size()) +
        " does not match shape " + shape_to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  t.dtype_ = dtype;
  t.requantize();
  return t;
}

Tensor Tensor::astype(DType dt) const {
  Tensor t = *this;
  t.dtype_ = dt;
  t.requantize();
  return t;
}

void Tensor::requantize() {
  if (dtype_ != DType::f32) return;
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

std::int64_t Tensor::flat_index(const std::vector<int>& idx) const {
  if (idx.size() != shape_.size()) {
    throw std::invalid_argument("index rank " + std::to_string(idx.size()) +
                                " vs tensor rank " +
                                std::to_string(shape_.size()));
  }
  std::int64_t flat = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= shape_[i]) {
      throw std::out_of_range("index out of range in dim " + std::to_string(i));
    }
    flat = flat * shape_[i] + idx[i];
  }
  return flat;
}

double& Tensor::at(const std::vector<int>& idx) {
  return data_[static_cast<size_t>(flat_index(idx))];
}

double Tensor::at(const std::vector<int>& idx) const {
  return data_[static_cast<size_t>(flat_index(idx))];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Rng::normal_tensor(std::vector<int> shape, double mean, double stddev,
                          DType dtype) {
  Tensor t(std::move(shape), dtype);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = normal(mean, stddev);
  t.requantize();
  return t;
}

Tensor Rng::uniform_tensor(std::vector<int> shape, double lo, double hi,
                           DType dtype) {
  Tensor t(std::move(shape), dtype);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
  t.requantize();
  return t;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gprune
