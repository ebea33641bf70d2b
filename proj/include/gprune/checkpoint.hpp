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
#include <string>
#include <vector>

#include "gprune/data.hpp"
#include "gprune/graph.hpp"
#include "gprune/ista.hpp"

namespace gprune {

/// Everything stored alongside the parameter tensors: the pipeline stage the
/// weights are in, the run seed, the rescale factor currently multiplied
/// into the prunable gamma vectors (1.0 once it has been undone), the
/// training configuration, and the recorded per-epoch monitor history.
struct CheckpointMeta {
  std::string stage = "init";
  std::uint64_t seed = 0;
  double alpha_applied = 1.0;
  IstaConfig config;
  TrainMonitor monitor;

  void validate() const;
};

struct Checkpoint {
  NetworkGraph graph;
  CheckpointMeta meta;
};

/// The pipeline stages in order. A checkpoint's stage must be one of these.
const std::vector<std::string>& checkpoint_stages();
bool valid_stage(const std::string& stage);

/// On-disk layout, version 1: the line "gprune-checkpoint 1", a line holding
/// the byte length of the JSON header, the header, a newline, then the
/// parameter blob. The header describes the graph, the meta fields, and a
/// manifest giving each tensor's name, dtype, shape, and byte offset in the
/// blob; tensors are stored little-endian (8-byte doubles, 4-byte floats) in
/// manifest order and covered by a CRC-32 recorded in the header.
/// load(save(x)) reproduces parameters and forward outputs bitwise.
void save_checkpoint(const std::string& path, const NetworkGraph& graph,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gprune
