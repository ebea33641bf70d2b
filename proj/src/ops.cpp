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
#include "gprune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gprune {

std::string padding_name(Padding p) { return p == Padding::valid ? "valid" : "same"; }

Padding padding_from_name(const std::string& name) {
  if (name == "valid") return Padding::valid;
  if (name == "same") return Padding::same;
  throw std::invalid_argument("unknown padding: " + name);
}

void BatchNormParams::validate() const {
  const int c = channels();
  if (c <= 0) throw std::invalid_argument("batchnorm with no channels");
  for (const Tensor* t : {&beta, &moving_mean, &moving_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw std::invalid_argument("batchnorm vectors must all have length " +
                                  std::to_string(c));
    }
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("batchnorm epsilon must be > 0");
  for (std::int64_t i = 0; i < moving_var.size(); ++i) {
    if (moving_var[i] < 0.0) {
      throw std::invalid_argument("negative moving variance at channel " +
                                  std::to_string(i));
    }
  }
}

BatchNormParams BatchNormParams::identity(int channels, double epsilon,
                                          double momentum) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0);
  p.beta = Tensor({channels});
  p.moving_mean = Tensor({channels});
  p.moving_var = Tensor::full({channels}, 1.0);
  p.epsilon = epsilon;
  p.momentum = momentum;
  return p;
}

namespace ops {

namespace {

void require_nhwc(const Tensor& x, const char* what) {
  if (x.rank() != 4) {
    throw std::invalid_argument(std::string(what) + " expects a rank-4 tensor, got " +
                                shape_to_string(x.shape()));
  }
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

ConvGeom conv_geometry(int in_h, int in_w, int kh, int kw, int stride,
                       Padding pad) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  ConvGeom g;
  if (pad == Padding::valid) {
    if (in_h < kh || in_w < kw) {
      throw std::invalid_argument("valid window " + std::to_string(kh) + "x" +
                                  std::to_string(kw) + " larger than input " +
                                  std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    g.out_h = (in_h - kh) / stride + 1;
    g.out_w = (in_w - kw) / stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  } else {
    g.out_h = ceil_div(in_h, stride);
    g.out_w = ceil_div(in_w, stride);
    const int pad_h = std::max((g.out_h - 1) * stride + kh - in_h, 0);
    const int pad_w = std::max((g.out_w - 1) * stride + kw - in_w, 0);
    g.pad_top = pad_h / 2;   // extra padding goes to the bottom/right
    g.pad_left = pad_w / 2;
  }
  return g;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, Padding pad) {
  require_nhwc(x, "conv2d input");
  if (kernel.rank() != 4) {
    throw std::invalid_argument("conv2d kernel expects rank-4 (kh,kw,cin,cout), got " +
                                shape_to_string(kernel.shape()));
  }
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const int kh = kernel.dim(0), kw = kernel.dim(1);
  const int kcin = kernel.dim(2), cout = kernel.dim(3);
  if (kcin != cin) {
    throw std::invalid_argument("conv2d channel mismatch: input " +
                                shape_to_string(x.shape()) + " vs kernel " +
                                shape_to_string(kernel.shape()));
  }
  const ConvGeom g = conv_geometry(h, w, kh, kw, stride, pad);
  Tensor y({n, g.out_h, g.out_w, cout}, promote({x.dtype(), kernel.dtype()}));

  const double* xd = x.data();
  const double* kd = kernel.data();
  double* yd = y.data();
  for (int b = 0; b < n; ++b) {
    const double* xb = xd + static_cast<std::int64_t>(b) * h * w * cin;
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        double* out = yd + (((static_cast<std::int64_t>(b) * g.out_h + oh) *
                             g.out_w) + ow) * cout;
        for (int i = 0; i < kh; ++i) {
          const int ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < kw; ++j) {
            const int iw = ow * stride - g.pad_left + j;
            if (iw < 0 || iw >= w) continue;
            const double* xp = xb + (static_cast<std::int64_t>(ih) * w + iw) * cin;
            const double* kp = kd + (static_cast<std::int64_t>(i) * kw + j) * cin * cout;
            for (int a = 0; a < cin; ++a) {
              const double xv = xp[a];
              const double* kr = kp + static_cast<std::int64_t>(a) * cout;
              for (int o = 0; o < cout; ++o) out[o] += xv * kr[o];
            }
          }
        }
      }
    }
  }
  y.requantize();
  return y;
}

Tensor conv2d_grad_input(const Tensor& dy, const Tensor& kernel,
                         const std::vector<int>& x_shape, int stride,
                         Padding pad) {
  const int n = x_shape[0], h = x_shape[1], w = x_shape[2], cin = x_shape[3];
  const int kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  const ConvGeom g = conv_geometry(h, w, kh, kw, stride, pad);
  Tensor dx(x_shape, dy.dtype());
  const double* dyd = dy.data();
  const double* kd = kernel.data();
  double* dxd = dx.data();
  for (int b = 0; b < n; ++b) {
    double* dxb = dxd + static_cast<std::int64_t>(b) * h * w * cin;
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        const double* dyp = dyd + (((static_cast<std::int64_t>(b) * g.out_h + oh) *
                                    g.out_w) + ow) * cout;
        for (int i = 0; i < kh; ++i) {
          const int ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < kw; ++j) {
            const int iw = ow * stride - g.pad_left + j;
            if (iw < 0 || iw >= w) continue;
            double* dxp = dxb + (static_cast<std::int64_t>(ih) * w + iw) * cin;
            const double* kp = kd + (static_cast<std::int64_t>(i) * kw + j) * cin * cout;
            for (int a = 0; a < cin; ++a) {
              const double* kr = kp + static_cast<std::int64_t>(a) * cout;
              double s = 0.0;
              for (int o = 0; o < cout; ++o) s += kr[o] * dyp[o];
              dxp[a] += s;
            }
          }
        }
      }
    }
  }
  dx.requantize();
  return dx;
}

Tensor conv2d_grad_kernel(const Tensor& dy, const Tensor& x,
                          const std::vector<int>& kernel_shape, int stride,
                          Padding pad) {
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const int kh = kernel_shape[0], kw = kernel_shape[1], cout = kernel_shape[3];
  const ConvGeom g = conv_geometry(h, w, kh, kw, stride, pad);
  Tensor dk(kernel_shape, dy.dtype());
  const double* dyd = dy.data();
  const double* xd = x.data();
  double* dkd = dk.data();
  for (int b = 0; b < n; ++b) {
    const double* xb = xd + static_cast<std::int64_t>(b) * h * w * cin;
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        const double* dyp = dyd + (((static_cast<std::int64_t>(b) * g.out_h + oh) *
                                    g.out_w) + ow) * cout;
        for (int i = 0; i < kh; ++i) {
          const int ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < kw; ++j) {
            const int iw = ow * stride - g.pad_left + j;
            if (iw < 0 || iw >= w) continue;
            const double* xp = xb + (static_cast<std::int64_t>(ih) * w + iw) * cin;
            double* dkp = dkd + (static_cast<std::int64_t>(i) * kw + j) * cin * cout;
            for (int a = 0; a < cin; ++a) {
              const double xv = xp[a];
              double* dkr = dkp + static_cast<std::int64_t>(a) * cout;
              for (int o = 0; o < cout; ++o) dkr[o] += xv * dyp[o];
            }
          }
        }
      }
    }
  }
  dk.requantize();
  return dk;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  const int c = x.dim(x.rank() - 1);
  if (bias.rank() != 1 || bias.dim(0) != c) {
    throw std::invalid_argument("bias length " + shape_to_string(bias.shape()) +
                                " vs channels " + std::to_string(c));
  }
  Tensor y = x;
  double* yd = y.data();
  const double* bd = bias.data();
  const std::int64_t rows = x.size() / c;
  for (std::int64_t r = 0; r < rows; ++r) {
    double* p = yd + r * c;
    for (int k = 0; k < c; ++k) p[k] += bd[k];
  }
  y.requantize();
  return y;
}

namespace {

void channel_moments(const Tensor& x, Tensor* mean, Tensor* var) {
  const int c = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / c;
  *mean = Tensor({c});
  *var = Tensor({c});
  const double* xd = x.data();
  double* m = mean->data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* p = xd + r * c;
    for (int k = 0; k < c; ++k) m[k] += p[k];
  }
  for (int k = 0; k < c; ++k) m[k] /= static_cast<double>(rows);
  double* v = var->data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* p = xd + r * c;
    for (int k = 0; k < c; ++k) {
      const double d = p[k] - m[k];
      v[k] += d * d;
    }
  }
  for (int k = 0; k < c; ++k) v[k] /= static_cast<double>(rows);
}

}  // namespace

Tensor batchnorm_infer(const Tensor& x, const BatchNormParams& p) {
  p.validate();
  const int c = x.dim(x.rank() - 1);
  if (c != p.channels()) {
    throw std::invalid_argument("batchnorm channel mismatch: input " +
                                shape_to_string(x.shape()) + " vs params " +
                                std::to_string(p.channels()));
  }
  Tensor y = x;
  const std::int64_t rows = x.size() / c;
  std::vector<double> scale(c), shift(c);
  for (int k = 0; k < c; ++k) {
    const double inv = 1.0 / std::sqrt(p.moving_var[k] + p.epsilon);
    scale[k] = p.gamma[k] * inv;
    shift[k] = p.beta[k] - p.moving_mean[k] * scale[k];
  }
  double* yd = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = yd + r * c;
    for (int k = 0; k < c; ++k) row[k] = row[k] * scale[k] + shift[k];
  }
  y.requantize();
  return y;
}

BatchNormOut batchnorm_train(const Tensor& x, const BatchNormParams& p) {
  p.validate();
  if (x.rank() == 0 || x.size() == 0) {
    throw std::invalid_argument("batchnorm training mode on an empty batch");
  }
  const int c = x.dim(x.rank() - 1);
  if (c != p.channels()) {
    throw std::invalid_argument("batchnorm channel mismatch: input " +
                                shape_to_string(x.shape()) + " vs params " +
                                std::to_string(p.channels()));
  }
  if (x.dim(0) == 0 || x.size() == 0) {
    throw std::invalid_argument("batchnorm training mode on an empty batch");
  }
  BatchNormOut out;
  channel_moments(x, &out.batch_mean, &out.batch_var);
  out.y = x;
  const std::int64_t rows = x.size() / c;
  std::vector<double> scale(c), shift(c);
  for (int k = 0; k < c; ++k) {
    const double inv = 1.0 / std::sqrt(out.batch_var[k] + p.epsilon);
    scale[k] = p.gamma[k] * inv;
    shift[k] = p.beta[k] - out.batch_mean[k] * scale[k];
  }
  double* yd = out.y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = yd + r * c;
    for (int k = 0; k < c; ++k) row[k] = row[k] * scale[k] + shift[k];
  }
  out.y.requantize();
  out.new_moving_mean = Tensor({c});
  out.new_moving_var = Tensor({c});
  for (int k = 0; k < c; ++k) {
    out.new_moving_mean[k] =
        p.momentum * p.moving_mean[k] + (1.0 - p.momentum) * out.batch_mean[k];
    out.new_moving_var[k] =
        p.momentum * p.moving_var[k] + (1.0 - p.momentum) * out.batch_var[k];
  }
  return out;
}

BatchNormOut batchnorm(const Tensor& x, const BatchNormParams& p, BnMode mode) {
  if (mode == BnMode::training) return batchnorm_train(x, p);
  BatchNormOut out;
  out.y = batchnorm_infer(x, p);
  return out;
}

Tensor batchnorm_train_backward(const Tensor& dy, const Tensor& x,
                                const BatchNormParams& p,
                                const Tensor& batch_mean,
                                const Tensor& batch_var, Tensor* dgamma,
                                Tensor* dbeta) {
  const int c = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / c;
  const double m = static_cast<double>(rows);
  *dgamma = Tensor({c});
  *dbeta = Tensor({c});
  Tensor sum_dy_xhat({c});
  const double* xd = x.data();
  const double* dyd = dy.data();
  std::vector<double> inv(c);
  for (int k = 0; k < c; ++k) inv[k] = 1.0 / std::sqrt(batch_var[k] + p.epsilon);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * c;
    const double* dr = dyd + r * c;
    for (int k = 0; k < c; ++k) {
      const double xhat = (xr[k] - batch_mean[k]) * inv[k];
      (*dbeta)[k] += dr[k];
      sum_dy_xhat[k] += dr[k] * xhat;
    }
  }
  for (int k = 0; k < c; ++k) (*dgamma)[k] = sum_dy_xhat[k];
  Tensor dx(x.shape(), dy.dtype());
  double* dxd = dx.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * c;
    const double* dr = dyd + r * c;
    double* o = dxd + r * c;
    for (int k = 0; k < c; ++k) {
      const double xhat = (xr[k] - batch_mean[k]) * inv[k];
      o[k] = p.gamma[k] * inv[k] *
             (dr[k] - (*dbeta)[k] / m - xhat * sum_dy_xhat[k] / m);
    }
  }
  dx.requantize();
  return dx;
}

Tensor batchnorm_infer_backward(const Tensor& dy, const Tensor& x,
                                const BatchNormParams& p, Tensor* dgamma,
                                Tensor* dbeta) {
  const int c = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / c;
  *dgamma = Tensor({c});
  *dbeta = Tensor({c});
  Tensor dx(x.shape(), dy.dtype());
  const double* xd = x.data();
  const double* dyd = dy.data();
  double* dxd = dx.data();
  std::vector<double> inv(c);
  for (int k = 0; k < c; ++k) inv[k] = 1.0 / std::sqrt(p.moving_var[k] + p.epsilon);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * c;
    const double* dr = dyd + r * c;
    double* o = dxd + r * c;
    for (int k = 0; k < c; ++k) {
      const double xhat = (xr[k] - p.moving_mean[k]) * inv[k];
      (*dbeta)[k] += dr[k];
      (*dgamma)[k] += dr[k] * xhat;
      o[k] = dr[k] * p.gamma[k] * inv[k];
    }
  }
  dx.requantize();
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  Tensor dx = dy;
  for (std::int64_t i = 0; i < dx.size(); ++i) {
    if (x[i] <= 0.0) dx[i] = 0.0;
  }
  return dx;
}

Tensor maxpool(const Tensor& x, int k, int stride, Padding pad,
               std::vector<std::int64_t>* argmax) {
  require_nhwc(x, "maxpool input");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const ConvGeom g = conv_geometry(h, w, k, k, stride, pad);
  Tensor y({n, g.out_h, g.out_w, c}, x.dtype());
  if (argmax) argmax->assign(static_cast<size_t>(y.size()), -1);
  const double* xd = x.data();
  double* yd = y.data();
  std::int64_t oi = 0;
  for (int b = 0; b < n; ++b) {
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        for (int ch = 0; ch < c; ++ch, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (int i = 0; i < k; ++i) {
            const int ih = oh * stride - g.pad_top + i;
            if (ih < 0 || ih >= h) continue;
            for (int j = 0; j < k; ++j) {
              const int iw = ow * stride - g.pad_left + j;
              if (iw < 0 || iw >= w) continue;
              const std::int64_t idx =
                  ((static_cast<std::int64_t>(b) * h + ih) * w + iw) * c + ch;
              if (xd[idx] > best) {
                best = xd[idx];
                best_idx = idx;
              }
            }
          }
          yd[oi] = best;
          if (argmax) (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
      }
    }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& dy, const std::vector<int>& x_shape,
                        const std::vector<std::int64_t>& argmax) {
  Tensor dx(x_shape, dy.dtype());
  for (std::int64_t i = 0; i < dy.size(); ++i) {
    dx[argmax[static_cast<size_t>(i)]] += dy[i];
  }
  dx.requantize();
  return dx;
}

Tensor avgpool(const Tensor& x, int k, int stride, Padding pad) {
  require_nhwc(x, "avgpool input");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const ConvGeom g = conv_geometry(h, w, k, k, stride, pad);
  Tensor y({n, g.out_h, g.out_w, c}, x.dtype());
  const double* xd = x.data();
  double* yd = y.data();
  for (int b = 0; b < n; ++b) {
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        double* out = yd + (((static_cast<std::int64_t>(b) * g.out_h + oh) *
                             g.out_w) + ow) * c;
        int count = 0;
        for (int i = 0; i < k; ++i) {
          const int ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < k; ++j) {
            const int iw = ow * stride - g.pad_left + j;
            if (iw < 0 || iw >= w) continue;
            ++count;
            const double* xp =
                xd + ((static_cast<std::int64_t>(b) * h + ih) * w + iw) * c;
            for (int ch = 0; ch < c; ++ch) out[ch] += xp[ch];
          }
        }
        for (int ch = 0; ch < c; ++ch) out[ch] /= count;
      }
    }
  }
  y.requantize();
  return y;
}

Tensor avgpool_backward(const Tensor& dy, const std::vector<int>& x_shape,
                        int k, int stride, Padding pad) {
  const int n = x_shape[0], h = x_shape[1], w = x_shape[2], c = x_shape[3];
  const ConvGeom g = conv_geometry(h, w, k, k, stride, pad);
  Tensor dx(x_shape, dy.dtype());
  const double* dyd = dy.data();
  double* dxd = dx.data();
  for (int b = 0; b < n; ++b) {
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        const double* dyp = dyd + (((static_cast<std::int64_t>(b) * g.out_h + oh) *
                                    g.out_w) + ow) * c;
        int count = 0;
        for (int i = 0; i < k; ++i) {
          const int ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < k; ++j) {
            const int iw = ow * stride - g.pad_left + j;
            if (iw < 0 || iw >= w) continue;
            ++count;
          }
        }
        for (int i = 0; i < k; ++i) {
          const int ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < k; ++j) {
            const int iw = ow * stride - g.pad_left + j;
            if (iw < 0 || iw >= w) continue;
            double* dxp =
                dxd + ((static_cast<std::int64_t>(b) * h + ih) * w + iw) * c;
            for (int ch = 0; ch < c; ++ch) dxp[ch] += dyp[ch] / count;
          }
        }
      }
    }
  }
  dx.requantize();
  return dx;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw std::invalid_argument("dense expects x[N,D] and w[D,M], got " +
                                shape_to_string(x.shape()) + " and " +
                                shape_to_string(w.shape()));
  }
  const int n = x.dim(0), d = x.dim(1), m = w.dim(1);
  if (w.dim(0) != d || b.rank() != 1 || b.dim(0) != m) {
    throw std::invalid_argument("dense shape mismatch: x " +
                                shape_to_string(x.shape()) + ", w " +
                                shape_to_string(w.shape()) + ", b " +
                                shape_to_string(b.shape()));
  }
  Tensor y({n, m}, promote({x.dtype(), w.dtype()}));
  const double* xd = x.data();
  const double* wd = w.data();
  double* yd = y.data();
  for (int r = 0; r < n; ++r) {
    double* out = yd + static_cast<std::int64_t>(r) * m;
    for (int k = 0; k < m; ++k) out[k] = b[k];
    const double* xr = xd + static_cast<std::int64_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      const double xv = xr[i];
      const double* wr = wd + static_cast<std::int64_t>(i) * m;
      for (int k = 0; k < m; ++k) out[k] += xv * wr[k];
    }
  }
  y.requantize();
  return y;
}

Tensor dense_grad_input(const Tensor& dy, const Tensor& w) {
  const int n = dy.dim(0), m = dy.dim(1), d = w.dim(0);
  Tensor dx({n, d}, dy.dtype());
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy.data() + static_cast<std::int64_t>(r) * m;
    double* dxr = dx.data() + static_cast<std::int64_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      const double* wr = w.data() + static_cast<std::int64_t>(i) * m;
      double s = 0.0;
      for (int k = 0; k < m; ++k) s += wr[k] * dyr[k];
      dxr[i] = s;
    }
  }
  dx.requantize();
  return dx;
}

Tensor dense_grad_weight(const Tensor& dy, const Tensor& x) {
  const int n = dy.dim(0), m = dy.dim(1), d = x.dim(1);
  Tensor dw({d, m}, dy.dtype());
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy.data() + static_cast<std::int64_t>(r) * m;
    const double* xr = x.data() + static_cast<std::int64_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      double* dwr = dw.data() + static_cast<std::int64_t>(i) * m;
      const double xv = xr[i];
      for (int k = 0; k < m; ++k) dwr[k] += xv * dyr[k];
    }
  }
  dw.requantize();
  return dw;
}

Tensor dense_grad_bias(const Tensor& dy) {
  const int n = dy.dim(0), m = dy.dim(1);
  Tensor db({m}, dy.dtype());
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy.data() + static_cast<std::int64_t>(r) * m;
    for (int k = 0; k < m; ++k) db[k] += dyr[k];
  }
  db.requantize();
  return db;
}

Tensor add_join(const Tensor& a, const Tensor& b) {
  require_nhwc(a, "add_join input");
  require_nhwc(b, "add_join input");
  const Tensor& wide = a.dim(3) >= b.dim(3) ? a : b;
  const Tensor& narrow = a.dim(3) >= b.dim(3) ? b : a;
  for (int i = 0; i < 3; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw std::invalid_argument("add_join spatial/batch mismatch: " +
                                  shape_to_string(a.shape()) + " vs " +
                                  shape_to_string(b.shape()));
    }
  }
  Tensor y = wide;
  const int cw = wide.dim(3), cn = narrow.dim(3);
  const std::int64_t rows = y.size() / cw;
  double* yd = y.data();
  const double* nd = narrow.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* yr = yd + r * cw;
    const double* nr = nd + r * cn;
    for (int k = 0; k < cn; ++k) yr[k] += nr[k];
  }
  y.requantize();
  return y;
}

SoftmaxXentOut softmax_cross_entropy(const Tensor& logits,
                                     const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("softmax_cross_entropy expects logits[N,C], got " +
                                shape_to_string(logits.shape()));
  }
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("label count " + std::to_string(labels.size()) +
                                " vs batch " + std::to_string(n));
  }
  SoftmaxXentOut out;
  out.softmax = Tensor({n, c});
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const int y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= c) {
      throw std::invalid_argument("label " + std::to_string(y) +
                                  " outside class range [0," + std::to_string(c) + ")");
    }
    const double* row = logits.data() + static_cast<std::int64_t>(r) * c;
    double mx = row[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double denom = 0.0;
    for (int k = 0; k < c; ++k) denom += std::exp(row[k] - mx);
    const double log_denom = std::log(denom);
    double* sm = out.softmax.data() + static_cast<std::int64_t>(r) * c;
    for (int k = 0; k < c; ++k) sm[k] = std::exp(row[k] - mx) / denom;
    total += log_denom - (row[y] - mx);
  }
  out.loss = total / n;
  return out;
}

Tensor softmax_cross_entropy_backward(const SoftmaxXentOut& fw,
                                      const std::vector<int>& labels) {
  Tensor d = fw.softmax;
  const int n = d.dim(0), c = d.dim(1);
  for (int r = 0; r < n; ++r) {
    d.data()[static_cast<std::int64_t>(r) * c + labels[static_cast<size_t>(r)]] -= 1.0;
  }
  for (std::int64_t i = 0; i < d.size(); ++i) d[i] /= n;
  return d;
}

}  // namespace ops
}  // namespace gprune
