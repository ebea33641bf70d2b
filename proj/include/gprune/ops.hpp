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
#include <vector>

#include "gprune/tensor.hpp"

namespace gprune {

enum class Padding { valid, same };

std::string padding_name(Padding p);
Padding padding_from_name(const std::string& name);

/// Per-channel batch-normalization state. All vectors have the channel count
/// of the owning layer.
struct BatchNormParams {
  Tensor gamma;        // scale
  Tensor beta;         // shift
  Tensor moving_mean;  // mu
  Tensor moving_var;   // sigma (variance, not stddev)
  double epsilon = 1e-3;
  double momentum = 0.99;

  int channels() const { return gamma.empty() ? 0 : gamma.dim(0); }
  void validate() const;
  static BatchNormParams identity(int channels, double epsilon = 1e-3,
                                  double momentum = 0.99);
};

enum class BnMode { training, inference };

struct BatchNormOut {
  Tensor y;
  // Training mode only: the batch statistics that produced y, plus the
  // exponentially updated moving stats (the input params are not mutated).
  Tensor batch_mean;
  Tensor batch_var;  // biased (population) estimator
  Tensor new_moving_mean;
  Tensor new_moving_var;
};

namespace ops {

struct ConvGeom {
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

/// Output geometry of a conv/pool window. `valid`: floor((in-k)/stride)+1.
/// `same`: ceil(in/stride), zero-padded symmetrically with the extra row or
/// column on the bottom/right.
ConvGeom conv_geometry(int in_h, int in_w, int kh, int kw, int stride,
                       Padding pad);

/// Cross-correlation of x[N,H,W,Cin] with kernel[kh,kw,Cin,Cout].
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, Padding pad);
Tensor conv2d_grad_input(const Tensor& dy, const Tensor& kernel,
                         const std::vector<int>& x_shape, int stride,
                         Padding pad);
Tensor conv2d_grad_kernel(const Tensor& dy, const Tensor& x,
                          const std::vector<int>& kernel_shape, int stride,
                          Padding pad);

/// Adds a per-channel bias along the last axis.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

Tensor batchnorm_infer(const Tensor& x, const BatchNormParams& p);
BatchNormOut batchnorm_train(const Tensor& x, const BatchNormParams& p);
BatchNormOut batchnorm(const Tensor& x, const BatchNormParams& p, BnMode mode);
/// dx of training-mode batchnorm; also fills dgamma/dbeta.
Tensor batchnorm_train_backward(const Tensor& dy, const Tensor& x,
                                const BatchNormParams& p,
                                const Tensor& batch_mean,
                                const Tensor& batch_var, Tensor* dgamma,
                                Tensor* dbeta);
Tensor batchnorm_infer_backward(const Tensor& dy, const Tensor& x,
                                const BatchNormParams& p, Tensor* dgamma,
                                Tensor* dbeta);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& dy, const Tensor& x);

/// Max pooling; `same` padding never selects a padded position. When argmax
/// is given it receives, per output element, the flat input index of the
/// selected maximum (first maximum in row-major scan order on ties).
Tensor maxpool(const Tensor& x, int k, int stride, Padding pad,
               std::vector<std::int64_t>* argmax = nullptr);
Tensor maxpool_backward(const Tensor& dy, const std::vector<int>& x_shape,
                        const std::vector<std::int64_t>& argmax);

/// Average pooling; `same` padding divides by the count of in-bounds
/// positions, so a constant channel pools to the same constant.
Tensor avgpool(const Tensor& x, int k, int stride, Padding pad);
Tensor avgpool_backward(const Tensor& dy, const std::vector<int>& x_shape,
                        int k, int stride, Padding pad);

/// x[N,D] * W[D,M] + b[M].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor dense_grad_input(const Tensor& dy, const Tensor& w);
Tensor dense_grad_weight(const Tensor& dy, const Tensor& x);
Tensor dense_grad_bias(const Tensor& dy);

/// Elementwise sum. When channel counts differ the narrower input is treated
/// as zero-padded at the channel tail (parameter-free shortcut widening).
Tensor add_join(const Tensor& a, const Tensor& b);

struct SoftmaxXentOut {
  double loss = 0.0;       // mean over the batch
  Tensor softmax;          // [N,C], cached for backward
};

SoftmaxXentOut softmax_cross_entropy(const Tensor& logits,
                                     const std::vector<int>& labels);
/// d(loss)/d(logits) = (softmax - onehot)/N.
Tensor softmax_cross_entropy_backward(const SoftmaxXentOut& fw,
                                      const std::vector<int>& labels);

}  // namespace ops
}  // namespace gprune
