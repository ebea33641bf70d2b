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
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gprune/graph.hpp"
#include "gprune/tensor.hpp"

namespace gprune {

/// Hyper-parameters of sparsified training. rho is the global sparsity
/// penalty multiplying each layer's memory cost; a two-phase schedule starts
/// at rho_warm for rho_warm_steps steps and then switches to rho.
struct IstaConfig {
  double rho = 0.0;
  double rho_warm = 0.0;
  std::int64_t rho_warm_steps = 0;
  double alpha = 1.0;  // gamma-kernel rescale factor the caller applies
  double mu0 = 0.01;   // initial learning rate
  double lr_decay = 1.0;  // multiplicative decay per epoch
  int batch_size = 125;
  int epochs = 1;
  std::int64_t max_steps = 0;  // 0 derives the cap from epochs
  int plateau_window = 5;      // epochs; 0 disables plateau termination
  double plateau_tol = 1e-3;
  double momentum = 0.0;   // plain SGD by default
  double ema_decay = 0.999;  // 0 disables the evaluation average

  void validate() const;
  double rho_at(std::int64_t step) const;
  double lr_at(int epoch) const;
};

/// The gamma vectors under ISTA: one entry per prunable layer with its
/// penalty weight. The vectors themselves live in the graph's
/// BatchNormParams; sparsity is always an exact-zero count.
struct GammaState {
  std::vector<int> layer_ids;
  std::vector<double> lambdas;

  static GammaState of(const NetworkGraph& g);
  /// Fraction of exactly-zero coordinates over all tracked gamma vectors.
  double sparsity(const NetworkGraph& g) const;
  /// rho * sum over layers of lambda_l * ||gamma_l||_1.
  double lasso(const NetworkGraph& g, double rho) const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double sparsity_fraction = 0.0;
  double lasso_term = 0.0;
  double lr = 0.0;
};

/// Per-epoch record of the three monitored quantities (loss, sparsity,
/// Lasso term) plus the learning rate.
struct TrainMonitor {
  std::vector<EpochStats> history;
  double chance_loss = 0.0;  // ln(num_classes), the no-information level

  /// True when all three quantities moved by less than tol (relative) over
  /// the trailing window of epochs.
  bool plateaued(int window, double tol) const;
  /// CSV with header epoch,loss,sparsity_fraction,lasso_term,lr.
  std::string to_csv() const;
};

/// Exponential moving average of the trainable parameters, used for
/// evaluation. The effective decay ramps as min(decay, (1+t)/(10+t)).
struct EmaState {
  double decay = 0.999;
  std::int64_t updates = 0;
  std::map<std::string, Tensor> shadow;

  void init_from(NetworkGraph& g);
  void step(NetworkGraph& g);
  /// Overwrites the graph's trainable parameters with the averages.
  void apply_to(NetworkGraph& g) const;
};

/// Raised when training hits a non-finite loss or gradient. Carries the last
/// finite parameter state so the caller can checkpoint it.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, NetworkGraph last, TrainMonitor mon)
      : std::runtime_error(msg),
        last_good(std::move(last)),
        monitor(std::move(mon)) {}
  NetworkGraph last_good;
  TrainMonitor monitor;
};

struct TrainResult {
  TrainMonitor monitor;
  EmaState ema;
  std::int64_t steps = 0;
  bool hit_plateau = false;
};

/// Soft threshold: max{|x| - eta, 0} * sgn(x). |x| <= eta maps to exact 0.0;
/// eta = 0 returns x unchanged (bitwise).
double prox(double x, double eta);
Tensor prox(const Tensor& x, double eta);

/// One ISTA update: prox(gamma - mu_t * grad, mu_t * rho * lambda_l).
/// Rejects non-finite gradients and non-positive mu_t.
Tensor ista_step(const Tensor& gamma, const Tensor& grad, double mu_t,
                 double lambda_l, double rho);

/// Scales gamma and beta of every prunable layer by alpha and the kernels of
/// their consumers by 1/alpha; the forward function is preserved. Applying
/// alpha then 1/alpha restores parameters up to float rounding.
void rescale_gamma_w(NetworkGraph& g, double alpha);

/// Mutates an assembled minibatch in place before the forward pass. The step
/// index counts from zero across the whole run.
using BatchHook = std::function<void(Tensor& batch, std::int64_t step)>;

/// SGD training with ISTA updates on the prunable gamma vectors. Plain SGD
/// (momentum off) unless configured otherwise; one logical thread; bitwise
/// deterministic in (seed, config) provided batch_hook is deterministic.
TrainResult train(NetworkGraph& g, const Tensor& images,
                  const std::vector<int>& labels, const IstaConfig& cfg,
                  std::uint64_t seed, const BatchHook& batch_hook = {});

/// The tuning failure patterns, evaluated on a recorded history: a linearly
/// decreasing Lasso term at near-zero sparsity suggests decreasing alpha;
/// saturated sparsity within the first epochs suggests decreasing rho; a
/// non-informative or exploding cross-entropy suggests decreasing mu or rho.
std::vector<std::string> diagnose(const TrainMonitor& monitor);

/// Rescale factor such that typical rescaled gamma magnitudes sit near
/// 100 * mu * lambda_l * rho, snapped to {0.001, 0.01, 0.1, 1}. A fresh
/// network (every tracked gamma still at its init value 1) maps to 1.0.
double suggest_alpha(const NetworkGraph& g, double mu, double rho);

}  // namespace gprune
