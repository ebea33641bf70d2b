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
#include "gprune/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gprune {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host byte order");

using nlohmann::json;

constexpr const char* kMagicLine = "gprune-checkpoint";
constexpr int kVersion = 1;

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (in.bad()) throw IoError("read failure on " + path);
  return bytes;
}

int dtype_width(DType dt) { return dt == DType::f32 ? 4 : 8; }

void append_tensor(std::vector<unsigned char>& blob, const Tensor& t) {
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if (t.dtype() == DType::f32) {
      const float f = static_cast<float>(t[i]);
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      blob.insert(blob.end(), b, b + 4);
    } else {
      const double d = t[i];
      unsigned char b[8];
      std::memcpy(b, &d, 8);
      blob.insert(blob.end(), b, b + 8);
    }
  }
}

json layer_to_json(const Layer& l) {
  json j;
  j["id"] = l.id;
  j["kind"] = layer_kind_name(l.kind);
  j["name"] = l.name;
  j["inputs"] = l.inputs;
  j["kh"] = l.kh;
  j["kw"] = l.kw;
  j["cin"] = l.cin;
  j["cout"] = l.cout;
  j["stride"] = l.stride;
  j["padding"] = padding_name(l.padding);
  j["has_batchnorm"] = l.has_batchnorm;
  j["has_bias"] = l.has_bias;
  j["prunable"] = l.prunable;
  j["bn_epsilon"] = l.bn.epsilon;
  j["bn_momentum"] = l.bn.momentum;
  j["pool_kind"] = pool_kind_name(l.pool_kind);
  j["pool_k"] = l.pool_k;
  j["pool_stride"] = l.pool_stride;
  j["pool_padding"] = padding_name(l.pool_padding);
  return j;
}

Layer layer_from_json(const json& j) {
  Layer l;
  l.id = j.at("id").get<int>();
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  l.inputs = j.at("inputs").get<std::vector<int>>();
  l.kh = j.at("kh").get<int>();
  l.kw = j.at("kw").get<int>();
  l.cin = j.at("cin").get<int>();
  l.cout = j.at("cout").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = padding_from_name(j.at("padding").get<std::string>());
  l.has_batchnorm = j.at("has_batchnorm").get<bool>();
  l.has_bias = j.at("has_bias").get<bool>();
  l.prunable = j.at("prunable").get<bool>();
  l.bn.epsilon = j.at("bn_epsilon").get<double>();
  l.bn.momentum = j.at("bn_momentum").get<double>();
  l.pool_kind = pool_kind_from_name(j.at("pool_kind").get<std::string>());
  l.pool_k = j.at("pool_k").get<int>();
  l.pool_stride = j.at("pool_stride").get<int>();
  l.pool_padding = padding_from_name(j.at("pool_padding").get<std::string>());
  return l;
}

json config_to_json(const IstaConfig& c) {
  json j;
  j["rho"] = c.rho;
  j["rho_warm"] = c.rho_warm;
  j["rho_warm_steps"] = c.rho_warm_steps;
  j["alpha"] = c.alpha;
  j["mu0"] = c.mu0;
  j["lr_decay"] = c.lr_decay;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["plateau_window"] = c.plateau_window;
  j["plateau_tol"] = c.plateau_tol;
  j["momentum"] = c.momentum;
  j["ema_decay"] = c.ema_decay;
  return j;
}

IstaConfig config_from_json(const json& j) {
  IstaConfig c;
  c.rho = j.at("rho").get<double>();
  c.rho_warm = j.at("rho_warm").get<double>();
  c.rho_warm_steps = j.at("rho_warm_steps").get<std::int64_t>();
  c.alpha = j.at("alpha").get<double>();
  c.mu0 = j.at("mu0").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.max_steps = j.at("max_steps").get<std::int64_t>();
  c.plateau_window = j.at("plateau_window").get<int>();
  c.plateau_tol = j.at("plateau_tol").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  return c;
}

Tensor* param_slot(Layer& l, const std::string& field) {
  if (field == "kernel") return &l.kernel;
  if (field == "bias") return &l.bias;
  if (field == "gamma") return &l.bn.gamma;
  if (field == "beta") return &l.bn.beta;
  if (field == "moving_mean") return &l.bn.moving_mean;
  if (field == "moving_var") return &l.bn.moving_var;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& checkpoint_stages() {
  static const std::vector<std::string> stages = {
      "init", "baseline", "sparsified", "pruned", "finetuned"};
  return stages;
}

bool valid_stage(const std::string& stage) {
  const auto& s = checkpoint_stages();
  return std::find(s.begin(), s.end(), stage) != s.end();
}

void CheckpointMeta::validate() const {
  if (!valid_stage(stage))
    throw std::invalid_argument("checkpoint: unknown stage \"" + stage +
                                "\"");
  if (!std::isfinite(alpha_applied) || alpha_applied <= 0.0)
    throw std::invalid_argument("checkpoint: alpha_applied must be positive");
  config.validate();
}

void save_checkpoint(const std::string& path, const NetworkGraph& graph,
                     const CheckpointMeta& meta) {
  meta.validate();
  graph.validate();
  NetworkGraph g = graph;  // parameters() needs mutable access

  std::vector<unsigned char> blob;
  json manifest = json::array();
  for (const ParamRef& p : g.parameters()) {
    json entry;
    entry["name"] = p.name();
    entry["dtype"] = dtype_name(p.tensor->dtype());
    entry["shape"] = p.tensor->shape();
    entry["offset"] = blob.size();
    entry["bytes"] = p.tensor->size() *
                     static_cast<std::int64_t>(dtype_width(p.tensor->dtype()));
    manifest.push_back(entry);
    append_tensor(blob, *p.tensor);
  }

  json graph_j;
  graph_j["preset"] = g.preset;
  graph_j["input_h"] = g.input_h;
  graph_j["input_w"] = g.input_w;
  graph_j["input_c"] = g.input_c;
  graph_j["num_classes"] = g.num_classes;
  graph_j["layers"] = json::array();
  for (const Layer& l : g.layers) graph_j["layers"].push_back(layer_to_json(l));

  json history = json::array();
  for (const EpochStats& e : meta.monitor.history)
    history.push_back(
        json::array({e.epoch, e.loss, e.sparsity_fraction, e.lasso_term, e.lr}));

  json header;
  header["stage"] = meta.stage;
  header["seed"] = meta.seed;
  header["alpha_applied"] = meta.alpha_applied;
  header["config"] = config_to_json(meta.config);
  header["monitor"] = {{"chance_loss", meta.monitor.chance_loss},
                       {"history", history}};
  header["graph"] = graph_j;
  header["manifest"] = manifest;
  header["blob_bytes"] = blob.size();
  header["blob_crc32"] = static_cast<std::uint32_t>(
      crc32(0L, blob.data(), static_cast<uInt>(blob.size())));

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << kMagicLine << ' ' << kVersion << '\n'
      << header_text.size() << '\n'
      << header_text << '\n';
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  const std::string text(bytes.begin(), bytes.end());

  const size_t line1_end = text.find('\n');
  if (line1_end == std::string::npos ||
      text.compare(0, std::strlen(kMagicLine), kMagicLine) != 0)
    throw IoError("not a gprune checkpoint: " + path);
  const std::string version =
      text.substr(std::strlen(kMagicLine) + 1,
                  line1_end - std::strlen(kMagicLine) - 1);
  if (version != std::to_string(kVersion))
    throw IoError("unsupported checkpoint version " + version + " in " +
                  path + "; this build reads version " +
                  std::to_string(kVersion));

  const size_t line2_end = text.find('\n', line1_end + 1);
  if (line2_end == std::string::npos)
    throw IoError("malformed checkpoint header in " + path +
                  ": missing header length line");
  std::int64_t header_len = 0;
  try {
    header_len =
        std::stoll(text.substr(line1_end + 1, line2_end - line1_end - 1));
  } catch (const std::exception&) {
    throw IoError("malformed checkpoint header in " + path +
                  ": bad header length line");
  }
  const std::int64_t header_start = static_cast<std::int64_t>(line2_end) + 1;
  const std::int64_t blob_start = header_start + header_len + 1;
  if (header_len < 2 ||
      blob_start > static_cast<std::int64_t>(bytes.size()) ||
      text[blob_start - 1] != '\n')
    throw IoError("malformed checkpoint header in " + path +
                  ": header length does not fit the file");

  json header;
  try {
    header = json::parse(text.substr(header_start, header_len));
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header in " + path + ": " + e.what());
  }

  try {
    const std::int64_t blob_bytes = header.at("blob_bytes").get<std::int64_t>();
    const std::int64_t got =
        static_cast<std::int64_t>(bytes.size()) - blob_start;
    if (got < blob_bytes)
      throw IoError("truncated checkpoint " + path + ": expected " +
                    std::to_string(blob_bytes) + " blob bytes, got " +
                    std::to_string(got) + " (failed at byte offset " +
                    std::to_string(bytes.size()) + ")");
    if (got > blob_bytes)
      throw IoError("checkpoint " + path + " has " +
                    std::to_string(got - blob_bytes) +
                    " trailing bytes after the parameter blob");
    const std::uint32_t stored = header.at("blob_crc32").get<std::uint32_t>();
    const std::uint32_t computed = static_cast<std::uint32_t>(
        crc32(0L, bytes.data() + blob_start,
              static_cast<uInt>(blob_bytes)));
    if (stored != computed)
      throw IoError("checksum mismatch in " + path +
                    ": parameter blob is corrupted (stored " + hex32(stored) +
                    ", computed " + hex32(computed) + ")");

    Checkpoint ckpt;
    ckpt.meta.stage = header.at("stage").get<std::string>();
    ckpt.meta.seed = header.at("seed").get<std::uint64_t>();
    ckpt.meta.alpha_applied = header.at("alpha_applied").get<double>();
    ckpt.meta.config = config_from_json(header.at("config"));
    const json& mon = header.at("monitor");
    ckpt.meta.monitor.chance_loss = mon.at("chance_loss").get<double>();
    for (const json& row : mon.at("history")) {
      if (!row.is_array() || row.size() != 5)
        throw IoError("malformed monitor history in " + path);
      EpochStats e;
      e.epoch = row[0].get<int>();
      e.loss = row[1].get<double>();
      e.sparsity_fraction = row[2].get<double>();
      e.lasso_term = row[3].get<double>();
      e.lr = row[4].get<double>();
      ckpt.meta.monitor.history.push_back(e);
    }

    const json& graph_j = header.at("graph");
    NetworkGraph& g = ckpt.graph;
    g.preset = graph_j.at("preset").get<std::string>();
    g.input_h = graph_j.at("input_h").get<int>();
    g.input_w = graph_j.at("input_w").get<int>();
    g.input_c = graph_j.at("input_c").get<int>();
    g.num_classes = graph_j.at("num_classes").get<int>();
    for (const json& lj : graph_j.at("layers"))
      g.layers.push_back(layer_from_json(lj));

    for (const json& entry : header.at("manifest")) {
      const std::string name = entry.at("name").get<std::string>();
      const size_t dot = name.find('.');
      if (name.size() < 4 || name[0] != 'L' || dot == std::string::npos)
        throw IoError("bad manifest entry \"" + name + "\" in " + path);
      const int layer_id = std::stoi(name.substr(1, dot - 1));
      const std::string field = name.substr(dot + 1);
      if (layer_id < 0 || layer_id >= g.num_layers())
        throw IoError("manifest entry \"" + name + "\" names a missing layer");
      Tensor* slot = param_slot(g.layer(layer_id), field);
      if (slot == nullptr)
        throw IoError("manifest entry \"" + name + "\" names an unknown field");

      const DType dt = dtype_from_name(entry.at("dtype").get<std::string>());
      Tensor t(entry.at("shape").get<std::vector<int>>(), dt);
      const std::int64_t offset = entry.at("offset").get<std::int64_t>();
      const std::int64_t nbytes = entry.at("bytes").get<std::int64_t>();
      if (nbytes != t.size() * dtype_width(dt) || offset < 0 ||
          offset + nbytes > blob_bytes)
        throw IoError("manifest entry \"" + name +
                      "\" does not fit the blob in " + path);
      const unsigned char* src = bytes.data() + blob_start + offset;
      for (std::int64_t i = 0; i < t.size(); ++i) {
        if (dt == DType::f32) {
          float f;
          std::memcpy(&f, src + 4 * i, 4);
          t[i] = f;
        } else {
          double d;
          std::memcpy(&d, src + 8 * i, 8);
          t[i] = d;
        }
      }
      *slot = std::move(t);
    }

    g.infer_shapes();
    g.validate();
    ckpt.meta.validate();
    return ckpt;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("invalid checkpoint " + path + ": " + e.what());
  }
}

}  // namespace gprune
