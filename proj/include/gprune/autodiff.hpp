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

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gprune/ops.hpp"
#include "gprune/tensor.hpp"

namespace gprune {

/// A value in the recorded computation. Leaves are parameters or batch data;
/// interior nodes are op outputs.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation during backward
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad, or downstream of something that does
  std::string name;

  bool has_grad() const { return !grad.empty(); }
};

using NodeRef = std::shared_ptr<Node>;

/// Reverse-mode tape. Ops append records in execution order (inputs always
/// recorded before consumers), so one reverse sweep over the records
/// propagates gradients from a scalar loss to every trainable leaf.
class Tape {
 public:
  NodeRef leaf(Tensor value, bool trainable, std::string name = "");

  /// Appends a record. `backward` reads out->grad and accumulates into the
  /// inputs it cares about; it is skipped entirely when no gradient reached
  /// the output.
  NodeRef record(Tensor value, std::vector<NodeRef> inputs,
                 std::function<void(Node& out)> backward);

  /// Single reverse sweep from a scalar loss node.
  void backward(const NodeRef& loss);

  /// Runs backward and returns gradients of all trainable named leaves.
  /// Trainable leaves the loss does not depend on get zero gradients.
  std::map<std::string, Tensor> gradient_map(const NodeRef& loss);

  size_t num_records() const { return records_.size(); }

 private:
  struct Record {
    std::vector<NodeRef> inputs;
    NodeRef output;
    std::function<void(Node&)> backward;
  };
  std::vector<Record> records_;
  std::vector<NodeRef> leaves_;
};

/// Adds g into n.grad, allocating on first use.
void accumulate_grad(Node& n, const Tensor& g);

// Tape-recording op wrappers. Forward values come from the ops:: kernels.
namespace ad {

NodeRef conv2d(Tape& t, const NodeRef& x, const NodeRef& kernel, int stride,
               Padding pad);
NodeRef add_channel_bias(Tape& t, const NodeRef& x, const NodeRef& bias);

struct BnNode {
  NodeRef y;
  Tensor batch_mean;  // training mode: stats behind y (no gradient flows here)
  Tensor batch_var;
  Tensor new_moving_mean;
  Tensor new_moving_var;
};

BnNode batchnorm_train(Tape& t, const NodeRef& x, const NodeRef& gamma,
                       const NodeRef& beta, const BatchNormParams& stats);
NodeRef batchnorm_infer(Tape& t, const NodeRef& x, const NodeRef& gamma,
                        const NodeRef& beta, const BatchNormParams& stats);

NodeRef relu(Tape& t, const NodeRef& x);
NodeRef maxpool(Tape& t, const NodeRef& x, int k, int stride, Padding pad);
NodeRef avgpool(Tape& t, const NodeRef& x, int k, int stride, Padding pad);
NodeRef add_join(Tape& t, const NodeRef& a, const NodeRef& b);
NodeRef dense(Tape& t, const NodeRef& x, const NodeRef& w, const NodeRef& b);
NodeRef reshape(Tape& t, const NodeRef& x, std::vector<int> shape);
NodeRef softmax_cross_entropy(Tape& t, const NodeRef& logits,
                              std::vector<int> labels);

}  // namespace ad
}  // namespace gprune
