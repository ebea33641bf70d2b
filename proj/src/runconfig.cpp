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
#include "gprune/runconfig.hpp"

#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace gprune {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument("config section " +
                                (path.empty() ? "top level" : path) +
                                " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) known = known || item.key() == key;
    if (!known)
      throw std::invalid_argument("unknown config key \"" + path +
                                  item.key() + "\"");
  }
}

template <class T>
void take(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config key \"" + path + key +
                                "\": " + e.what());
  }
}

SynthSpec parse_synth(const json& j, const std::string& path) {
  check_keys(j, path, {"n", "num_classes", "height", "width", "noise_channels",
                       "noise", "amplitude", "blob_sigma", "center_jitter",
                       "seed"});
  SynthSpec s;
  take(j, path, "n", s.n);
  take(j, path, "num_classes", s.num_classes);
  take(j, path, "height", s.height);
  take(j, path, "width", s.width);
  take(j, path, "noise_channels", s.noise_channels);
  take(j, path, "noise", s.noise);
  take(j, path, "amplitude", s.amplitude);
  take(j, path, "blob_sigma", s.blob_sigma);
  take(j, path, "center_jitter", s.center_jitter);
  take(j, path, "seed", s.seed);
  return s;
}

DatasetConfig parse_dataset(const json& j, const std::string& path) {
  check_keys(j, path,
             {"kind", "train_images", "train_labels", "test_images",
              "test_labels", "train_batch", "test_batch", "synth",
              "synth_test_fraction", "standardize"});
  DatasetConfig d;
  take(j, path, "kind", d.kind);
  take(j, path, "train_images", d.train_images);
  take(j, path, "train_labels", d.train_labels);
  take(j, path, "test_images", d.test_images);
  take(j, path, "test_labels", d.test_labels);
  take(j, path, "train_batch", d.train_batch);
  take(j, path, "test_batch", d.test_batch);
  if (j.contains("synth")) d.synth = parse_synth(j.at("synth"), path + "synth.");
  take(j, path, "synth_test_fraction", d.synth_test_fraction);
  take(j, path, "standardize", d.standardize);
  return d;
}

IstaConfig parse_ista(const json& j, const std::string& path) {
  check_keys(j, path,
             {"rho", "rho_warm", "rho_warm_steps", "alpha", "mu0", "lr_decay",
              "batch_size", "epochs", "max_steps", "plateau_window",
              "plateau_tol", "momentum", "ema_decay"});
  IstaConfig c;
  take(j, path, "rho", c.rho);
  take(j, path, "rho_warm", c.rho_warm);
  take(j, path, "rho_warm_steps", c.rho_warm_steps);
  take(j, path, "alpha", c.alpha);
  take(j, path, "mu0", c.mu0);
  take(j, path, "lr_decay", c.lr_decay);
  take(j, path, "batch_size", c.batch_size);
  take(j, path, "epochs", c.epochs);
  take(j, path, "max_steps", c.max_steps);
  take(j, path, "plateau_window", c.plateau_window);
  take(j, path, "plateau_tol", c.plateau_tol);
  take(j, path, "momentum", c.momentum);
  take(j, path, "ema_decay", c.ema_decay);
  return c;
}

void parse_augment(const json& j, const std::string& path, AugmentConfig& a,
                   bool& enabled) {
  check_keys(j, path,
             {"enabled", "pad_crop", "pad_to", "crop", "flip", "brightness",
              "brightness_delta", "contrast", "contrast_lo", "contrast_hi",
              "standardize"});
  take(j, path, "enabled", enabled);
  take(j, path, "pad_crop", a.pad_crop);
  take(j, path, "pad_to", a.pad_to);
  take(j, path, "crop", a.crop);
  take(j, path, "flip", a.flip);
  take(j, path, "brightness", a.brightness);
  take(j, path, "brightness_delta", a.brightness_delta);
  take(j, path, "contrast", a.contrast);
  take(j, path, "contrast_lo", a.contrast_lo);
  take(j, path, "contrast_hi", a.contrast_hi);
  take(j, path, "standardize", a.standardize);
}

void apply_override(json& root, const std::string& entry) {
  const size_t eq = entry.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must be KEY=VALUE, got \"" + entry +
                                "\"");
  const std::string key = entry.substr(0, eq);
  const std::string value = entry.substr(eq + 1);

  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded() || parsed.is_object() || parsed.is_array())
    parsed = value;  // unquoted strings and non-scalars pass through verbatim

  json* node = &root;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part =
        key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty())
      throw std::invalid_argument("override key \"" + key +
                                  "\" has an empty path segment");
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    if (node->contains(part) && !(*node)[part].is_object())
      throw std::invalid_argument("override key \"" + key +
                                  "\" descends into a non-object");
    node = &(*node)[part];
    start = dot + 1;
  }
}

json config_to_json_tree(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"train_images", c.dataset.train_images},
                  {"train_labels", c.dataset.train_labels},
                  {"test_images", c.dataset.test_images},
                  {"test_labels", c.dataset.test_labels},
                  {"train_batch", c.dataset.train_batch},
                  {"test_batch", c.dataset.test_batch},
                  {"synth_test_fraction", c.dataset.synth_test_fraction},
                  {"standardize", c.dataset.standardize},
                  {"synth",
                   {{"n", c.dataset.synth.n},
                    {"num_classes", c.dataset.synth.num_classes},
                    {"height", c.dataset.synth.height},
                    {"width", c.dataset.synth.width},
                    {"noise_channels", c.dataset.synth.noise_channels},
                    {"noise", c.dataset.synth.noise},
                    {"amplitude", c.dataset.synth.amplitude},
                    {"blob_sigma", c.dataset.synth.blob_sigma},
                    {"center_jitter", c.dataset.synth.center_jitter},
                    {"seed", c.dataset.synth.seed}}}};
  const auto ista_json = [](const IstaConfig& t) {
    return json{{"rho", t.rho},
                {"rho_warm", t.rho_warm},
                {"rho_warm_steps", t.rho_warm_steps},
                {"alpha", t.alpha},
                {"mu0", t.mu0},
                {"lr_decay", t.lr_decay},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"max_steps", t.max_steps},
                {"plateau_window", t.plateau_window},
                {"plateau_tol", t.plateau_tol},
                {"momentum", t.momentum},
                {"ema_decay", t.ema_decay}};
  };
  j["train"] = ista_json(c.train);
  j["finetune"] = ista_json(c.finetune);
  j["augment"] = {{"enabled", c.augment_enabled},
                  {"pad_crop", c.augment.pad_crop},
                  {"pad_to", c.augment.pad_to},
                  {"crop", c.augment.crop},
                  {"flip", c.augment.flip},
                  {"brightness", c.augment.brightness},
                  {"brightness_delta", c.augment.brightness_delta},
                  {"contrast", c.augment.contrast},
                  {"contrast_lo", c.augment.contrast_lo},
                  {"contrast_hi", c.augment.contrast_hi},
                  {"standardize", c.augment.standardize}};
  return j;
}

}  // namespace

void DatasetConfig::validate() const {
  if (kind == "synth") {
    synth.validate();
    if (synth_test_fraction < 0.0 || synth_test_fraction > 0.9)
      throw std::invalid_argument(
          "dataset.synth_test_fraction must lie in [0, 0.9]");
  } else if (kind == "mnist") {
    if (train_images.empty() || train_labels.empty())
      throw std::invalid_argument(
          "dataset.kind \"mnist\" needs train_images and train_labels");
  } else if (kind == "cifar10") {
    if (train_batch.empty())
      throw std::invalid_argument(
          "dataset.kind \"cifar10\" needs train_batch");
  } else {
    throw std::invalid_argument("dataset.kind \"" + kind +
                                "\" is not one of synth, mnist, cifar10");
  }
}

void RunConfig::validate() const {
  dataset.validate();
  train.validate();
  finetune.validate();
  augment.validate();
  if (finetune.rho != 0.0 || finetune.rho_warm != 0.0 ||
      finetune.alpha != 1.0)
    throw std::invalid_argument(
        "finetune is plain SGD: rho, rho_warm must be 0 and alpha must be 1");
  if (out_dir.empty())
    throw std::invalid_argument("out_dir must not be empty");
}

RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object())
    throw std::invalid_argument("config root must be a JSON object");
  for (const std::string& entry : overrides) apply_override(root, entry);

  check_keys(root, "",
             {"preset", "dataset", "train", "finetune", "augment", "seed",
              "out_dir"});
  RunConfig cfg;
  take(root, "", "preset", cfg.preset);
  take(root, "", "seed", cfg.seed);
  take(root, "", "out_dir", cfg.out_dir);
  if (root.contains("dataset"))
    cfg.dataset = parse_dataset(root.at("dataset"), "dataset.");
  if (root.contains("train"))
    cfg.train = parse_ista(root.at("train"), "train.");
  if (root.contains("finetune"))
    cfg.finetune = parse_ista(root.at("finetune"), "finetune.");
  if (root.contains("augment"))
    parse_augment(root.at("augment"), "augment.", cfg.augment,
                  cfg.augment_enabled);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  const std::string text{std::istreambuf_iterator<char>(in),
                         std::istreambuf_iterator<char>()};
  try {
    return parse_run_config(text, overrides);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string run_config_to_json(const RunConfig& cfg) {
  return config_to_json_tree(cfg).dump(2) + "\n";
}

}  // namespace gprune
