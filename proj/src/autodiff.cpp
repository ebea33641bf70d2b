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
#include "gprune/autodiff.hpp"

#include <stdexcept>

namespace gprune {

void accumulate_grad(Node& n, const Tensor& g) {
  if (!n.has_grad()) {
    n.grad = g;
    return;
  }
  for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

NodeRef Tape::leaf(Tensor value, bool trainable, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = trainable;
  n->needs_grad = trainable;
  n->name = std::move(name);
  leaves_.push_back(n);
  return n;
}

NodeRef Tape::record(Tensor value, std::vector<NodeRef> inputs,
                     std::function<void(Node&)> backward) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  for (const NodeRef& in : inputs) {
    if (in->needs_grad) out->needs_grad = true;
  }
  records_.push_back(Record{std::move(inputs), out, std::move(backward)});
  return out;
}

void Tape::backward(const NodeRef& loss) {
  if (loss->value.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_to_string(loss->value.shape()));
  }
  loss->grad = Tensor::full({1}, 1.0);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Node& out = *it->output;
    if (!out.needs_grad || !out.has_grad()) continue;
    it->backward(out);
  }
}

std::map<std::string, Tensor> Tape::gradient_map(const NodeRef& loss) {
  backward(loss);
  std::map<std::string, Tensor> grads;
  for (const NodeRef& leaf : leaves_) {
    if (!leaf->requires_grad) continue;
    grads[leaf->name] =
        leaf->has_grad() ? leaf->grad : Tensor(leaf->value.shape());
  }
  return grads;
}

namespace ad {

NodeRef conv2d(Tape& t, const NodeRef& x, const NodeRef& kernel, int stride,
               Padding pad) {
  Tensor y = ops::conv2d(x->value, kernel->value, stride, pad);
  return t.record(std::move(y), {x, kernel}, [x, kernel, stride, pad](Node& out) {
    if (x->needs_grad) {
      accumulate_grad(*x, ops::conv2d_grad_input(out.grad, kernel->value,
                                                 x->value.shape(), stride, pad));
    }
    if (kernel->needs_grad) {
      accumulate_grad(*kernel,
                      ops::conv2d_grad_kernel(out.grad, x->value,
                                              kernel->value.shape(), stride, pad));
    }
  });
}

NodeRef add_channel_bias(Tape& t, const NodeRef& x, const NodeRef& bias) {
  Tensor y = ops::add_channel_bias(x->value, bias->value);
  return t.record(std::move(y), {x, bias}, [x, bias](Node& out) {
    if (x->needs_grad) accumulate_grad(*x, out.grad);
    if (bias->needs_grad) {
      const int c = bias->value.dim(0);
      Tensor db({c});
      const std::int64_t rows = out.grad.size() / c;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* g = out.grad.data() + r * c;
        for (int k = 0; k < c; ++k) db[k] += g[k];
      }
      accumulate_grad(*bias, db);
    }
  });
}

BnNode batchnorm_train(Tape& t, const NodeRef& x, const NodeRef& gamma,
                       const NodeRef& beta, const BatchNormParams& stats) {
  BatchNormParams p = stats;
  p.gamma = gamma->value;
  p.beta = beta->value;
  BatchNormOut fw = ops::batchnorm_train(x->value, p);
  BnNode node;
  node.batch_mean = fw.batch_mean;
  node.batch_var = fw.batch_var;
  node.new_moving_mean = fw.new_moving_mean;
  node.new_moving_var = fw.new_moving_var;
  Tensor mean = fw.batch_mean, var = fw.batch_var;
  const double eps = stats.epsilon;
  node.y = t.record(std::move(fw.y), {x, gamma, beta},
                    [x, gamma, beta, mean, var, eps](Node& out) {
                      BatchNormParams bp;
                      bp.gamma = gamma->value;
                      bp.beta = beta->value;
                      bp.moving_mean = mean;
                      bp.moving_var = var;
                      bp.epsilon = eps;
                      Tensor dg, db;
                      Tensor dx = ops::batchnorm_train_backward(
                          out.grad, x->value, bp, mean, var, &dg, &db);
                      if (x->needs_grad) accumulate_grad(*x, dx);
                      if (gamma->needs_grad) accumulate_grad(*gamma, dg);
                      if (beta->needs_grad) accumulate_grad(*beta, db);
                    });
  return node;
}

NodeRef batchnorm_infer(Tape& t, const NodeRef& x, const NodeRef& gamma,
                        const NodeRef& beta, const BatchNormParams& stats) {
  BatchNormParams p = stats;
  p.gamma = gamma->value;
  p.beta = beta->value;
  Tensor y = ops::batchnorm_infer(x->value, p);
  BatchNormParams saved = p;
  return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, saved](Node& out) {
    Tensor dg, db;
    Tensor dx = ops::batchnorm_infer_backward(out.grad, x->value, saved, &dg, &db);
    if (x->needs_grad) accumulate_grad(*x, dx);
    if (gamma->needs_grad) accumulate_grad(*gamma, dg);
    if (beta->needs_grad) accumulate_grad(*beta, db);
  });
}

NodeRef relu(Tape& t, const NodeRef& x) {
  Tensor y = ops::relu(x->value);
  return t.record(std::move(y), {x}, [x](Node& out) {
    if (x->needs_grad) accumulate_grad(*x, ops::relu_backward(out.grad, x->value));
  });
}

NodeRef maxpool(Tape& t, const NodeRef& x, int k, int stride, Padding pad) {
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor y = ops::maxpool(x->value, k, stride, pad, argmax.get());
  return t.record(std::move(y), {x}, [x, argmax](Node& out) {
    if (x->needs_grad) {
      accumulate_grad(*x, ops::maxpool_backward(out.grad, x->value.shape(), *argmax));
    }
  });
}

NodeRef avgpool(Tape& t, const NodeRef& x, int k, int stride, Padding pad) {
  Tensor y = ops::avgpool(x->value, k, stride, pad);
  return t.record(std::move(y), {x}, [x, k, stride, pad](Node& out) {
    if (x->needs_grad) {
      accumulate_grad(*x, ops::avgpool_backward(out.grad, x->value.shape(), k,
                                                stride, pad));
    }
  });
}

NodeRef add_join(Tape& t, const NodeRef& a, const NodeRef& b) {
  Tensor y = ops::add_join(a->value, b->value);
  return t.record(std::move(y), {a, b}, [a, b](Node& out) {
    const int cw = out.grad.dim(3);
    for (const NodeRef& in : {a, b}) {
      if (!in->needs_grad) continue;
      const int ci = in->value.dim(3);
      if (ci == cw) {
        accumulate_grad(*in, out.grad);
      } else {
        Tensor g(in->value.shape(), out.grad.dtype());
        const std::int64_t rows = g.size() / ci;
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* src = out.grad.data() + r * cw;
          double* dst = g.data() + r * ci;
          for (int k = 0; k < ci; ++k) dst[k] = src[k];
        }
        accumulate_grad(*in, g);
      }
    }
  });
}

NodeRef dense(Tape& t, const NodeRef& x, const NodeRef& w, const NodeRef& b) {
  Tensor y = ops::dense(x->value, w->value, b->value);
  return t.record(std::move(y), {x, w, b}, [x, w, b](Node& out) {
    if (x->needs_grad) accumulate_grad(*x, ops::dense_grad_input(out.grad, w->value));
    if (w->needs_grad) accumulate_grad(*w, ops::dense_grad_weight(out.grad, x->value));
    if (b->needs_grad) accumulate_grad(*b, ops::dense_grad_bias(out.grad));
  });
}

NodeRef reshape(Tape& t, const NodeRef& x, std::vector<int> shape) {
  if (shape_numel(shape) != x->value.size()) {
    throw std::invalid_argument("reshape to " + shape_to_string(shape) +
                                " from " + shape_to_string(x->value.shape()));
  }
  Tensor y = Tensor::from(shape, x->value.values(), x->value.dtype());
  return t.record(std::move(y), {x}, [x](Node& out) {
    if (x->needs_grad) {
      Tensor g = Tensor::from(x->value.shape(), out.grad.values(), out.grad.dtype());
      accumulate_grad(*x, g);
    }
  });
}

NodeRef softmax_cross_entropy(Tape& t, const NodeRef& logits,
                              std::vector<int> labels) {
  auto fw = std::make_shared<ops::SoftmaxXentOut>(
      ops::softmax_cross_entropy(logits->value, labels));
  Tensor loss = Tensor::from({1}, {fw->loss});
  auto lbl = std::make_shared<std::vector<int>>(std::move(labels));
  return t.record(std::move(loss), {logits}, [logits, fw, lbl](Node& out) {
    if (!logits->needs_grad) return;
    Tensor d = ops::softmax_cross_entropy_backward(*fw, *lbl);
    const double scale = out.grad[0];
    if (scale != 1.0) {
      for (std::int64_t i = 0; i < d.size(); ++i) d[i] *= scale;
    }
    accumulate_grad(*logits, d);
  });
}

}  // namespace ad
}  // namespace gprune
