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
#include "gprune/ista.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gprune/autodiff.hpp"
#include "gprune/ops.hpp"

namespace gprune {

void IstaConfig::validate() const {
  if (!(rho >= 0.0) || !std::isfinite(rho))
    throw std::invalid_argument("rho must be >= 0");
  if (!(rho_warm >= 0.0) || !std::isfinite(rho_warm))
    throw std::invalid_argument("rho_warm must be >= 0");
  if (rho_warm_steps < 0)
    throw std::invalid_argument("rho_warm_steps must be >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("alpha must be > 0");
  if (!(mu0 > 0.0) || !std::isfinite(mu0))
    throw std::invalid_argument("mu0 must be > 0");
  if (!(lr_decay > 0.0) || lr_decay > 1.0)
    throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
  if (plateau_window < 0)
    throw std::invalid_argument("plateau_window must be >= 0");
  if (!(plateau_tol > 0.0))
    throw std::invalid_argument("plateau_tol must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (ema_decay < 0.0 || ema_decay >= 1.0)
    throw std::invalid_argument("ema_decay must be in [0, 1)");
}

double IstaConfig::rho_at(std::int64_t step) const {
  return step < rho_warm_steps ? rho_warm : rho;
}

double IstaConfig::lr_at(int epoch) const {
  return mu0 * std::pow(lr_decay, epoch);
}

GammaState GammaState::of(const NetworkGraph& g) {
  GammaState s;
  for (int id : g.prunable_layers()) {
    s.layer_ids.push_back(id);
    s.lambdas.push_back(g.penalty_lambda(id));
  }
  return s;
}

double GammaState::sparsity(const NetworkGraph& g) const {
  std::int64_t zeros = 0, total = 0;
  for (int id : layer_ids) {
    const Tensor& gamma = g.layer(id).bn.gamma;
    total += gamma.size();
    for (std::int64_t i = 0; i < gamma.size(); ++i)
      if (gamma[i] == 0.0) ++zeros;
  }
  return total == 0 ? 0.0
                    : static_cast<double>(zeros) / static_cast<double>(total);
}

double GammaState::lasso(const NetworkGraph& g, double rho) const {
  double total = 0.0;
  for (size_t i = 0; i < layer_ids.size(); ++i) {
    const Tensor& gamma = g.layer(layer_ids[i]).bn.gamma;
    double l1 = 0.0;
    for (std::int64_t j = 0; j < gamma.size(); ++j) l1 += std::fabs(gamma[j]);
    total += lambdas[i] * l1;
  }
  return rho * total;
}

bool TrainMonitor::plateaued(int window, double tol) const {
  if (window <= 0) return false;
  if (static_cast<int>(history.size()) < window + 1) return false;
  const size_t first = history.size() - static_cast<size_t>(window) - 1;
  auto flat = [&](auto field) {
    double lo = history[first].*field, hi = history[first].*field;
    for (size_t i = first; i < history.size(); ++i) {
      lo = std::min(lo, history[i].*field);
      hi = std::max(hi, history[i].*field);
    }
    const double scale = std::max(std::fabs(hi), 1e-9);
    return (hi - lo) / scale < tol;
  };
  return flat(&EpochStats::loss) && flat(&EpochStats::sparsity_fraction) &&
         flat(&EpochStats::lasso_term);
}

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string TrainMonitor::to_csv() const {
  std::string out = "epoch,loss,sparsity_fraction,lasso_term,lr\n";
  for (const EpochStats& e : history) {
    out += std::to_string(e.epoch);
    out += ',';
    out += fmt_g17(e.loss);
    out += ',';
    out += fmt_g17(e.sparsity_fraction);
    out += ',';
    out += fmt_g17(e.lasso_term);
    out += ',';
    out += fmt_g17(e.lr);
    out += '\n';
  }
  return out;
}

void EmaState::init_from(NetworkGraph& g) {
  shadow.clear();
  updates = 0;
  for (const ParamRef& p : g.trainable_parameters()) shadow[p.name()] = *p.tensor;
}

void EmaState::step(NetworkGraph& g) {
  // TF-style ramp: early steps average almost nothing so short runs are not
  // dominated by the random init
  const double d = std::min(
      decay, (1.0 + static_cast<double>(updates)) /
                 (10.0 + static_cast<double>(updates)));
  for (const ParamRef& p : g.trainable_parameters()) {
    Tensor& s = shadow.at(p.name());
    for (std::int64_t i = 0; i < s.size(); ++i)
      s[i] = d * s[i] + (1.0 - d) * (*p.tensor)[i];
  }
  ++updates;
}

void EmaState::apply_to(NetworkGraph& g) const {
  for (const ParamRef& p : g.trainable_parameters()) {
    auto it = shadow.find(p.name());
    if (it == shadow.end())
      throw std::invalid_argument("EMA state lacks parameter " + p.name());
    *p.tensor = it->second;
  }
}

double prox(double x, double eta) {
  if (eta < 0.0) throw std::invalid_argument("prox: eta must be >= 0");
  if (eta == 0.0) return x;
  const double mag = std::fabs(x);
  if (mag <= eta) return 0.0;
  return std::copysign(mag - eta, x);
}

Tensor prox(const Tensor& x, double eta) {
  if (eta < 0.0) throw std::invalid_argument("prox: eta must be >= 0");
  Tensor out = x;
  if (eta == 0.0) return out;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = prox(out[i], eta);
  out.requantize();
  return out;
}

Tensor ista_step(const Tensor& gamma, const Tensor& grad, double mu_t,
                 double lambda_l, double rho) {
  if (!gamma.same_shape(grad))
    throw std::invalid_argument("ista_step: gamma " +
                                shape_to_string(gamma.shape()) + " vs grad " +
                                shape_to_string(grad.shape()));
  if (!(mu_t > 0.0)) throw std::invalid_argument("ista_step: mu_t must be > 0");
  if (!grad.all_finite())
    throw std::invalid_argument("ista_step: non-finite gradient rejected");
  Tensor shifted = gamma;
  for (std::int64_t i = 0; i < shifted.size(); ++i)
    shifted[i] = gamma[i] - mu_t * grad[i];
  shifted.requantize();
  return prox(shifted, mu_t * rho * lambda_l);
}

void rescale_gamma_w(NetworkGraph& g, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("rescale: alpha must be > 0");
  std::vector<int> hit(g.layers.size(), -1);
  for (int id : g.prunable_layers()) {
    Layer& L = g.layer(id);
    for (std::int64_t i = 0; i < L.bn.gamma.size(); ++i) L.bn.gamma[i] *= alpha;
    for (std::int64_t i = 0; i < L.bn.beta.size(); ++i) L.bn.beta[i] *= alpha;
    L.bn.gamma.requantize();
    L.bn.beta.requantize();
    for (int c : g.consumers(id)) {
      if (hit[c] >= 0)
        throw std::logic_error("rescale: consumer " + g.layer(c).name +
                               " is shared by prunable layers " +
                               g.layer(hit[c]).name + " and " + L.name);
      hit[c] = id;
      Layer& C = g.layer(c);
      if (C.cin != L.cout)
        throw std::logic_error("rescale: consumer " + C.name +
                               " reads more than layer " + L.name +
                               "'s channels");
      for (std::int64_t i = 0; i < C.kernel.size(); ++i) C.kernel[i] /= alpha;
      C.kernel.requantize();
    }
  }
}

TrainResult train(NetworkGraph& g, const Tensor& images,
                  const std::vector<int>& labels, const IstaConfig& cfg,
                  std::uint64_t seed, const BatchHook& batch_hook) {
  cfg.validate();
  if (images.rank() != 4 ||
      images.dim(0) != static_cast<int>(labels.size()) || labels.empty())
    throw std::invalid_argument("train: images/labels mismatch or empty");
  for (int id : g.prunable_layers())
    if (!g.layer(id).has_batchnorm)
      throw std::invalid_argument("train: prunable layer without batchnorm");

  const int n = images.dim(0);
  const int h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::int64_t row = static_cast<std::int64_t>(h) * w * c;
  const int steps_per_epoch = std::max(1, n / cfg.batch_size);
  const std::int64_t cap =
      cfg.max_steps > 0
          ? cfg.max_steps
          : static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;

  GammaState gs = GammaState::of(g);
  std::map<int, size_t> lambda_of;  // prunable layer id -> index in gs
  for (size_t i = 0; i < gs.layer_ids.size(); ++i)
    lambda_of[gs.layer_ids[i]] = i;

  TrainResult result;
  result.monitor.chance_loss = std::log(std::max(2, g.num_classes));
  result.ema.decay = cfg.ema_decay;
  if (cfg.ema_decay > 0.0) result.ema.init_from(g);

  std::map<std::string, Tensor> velocity;  // momentum buffers, lazily created
  Rng order_rng(mix_seed(seed, 0x6f72646572));  // batch-order stream
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  NetworkGraph last_good = g;
  for (int epoch = 0; step < cap; ++epoch) {
    order_rng.shuffle(order);
    const double mu_t = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int b = 0; b < steps_per_epoch && step < cap; ++b, ++step) {
      Tensor batch({cfg.batch_size, h, w, c}, images.dtype());
      std::vector<int> batch_labels(cfg.batch_size);
      for (int i = 0; i < cfg.batch_size; ++i) {
        const int src = order[(b * cfg.batch_size + i) % n];
        std::copy(images.data() + src * row, images.data() + (src + 1) * row,
                  batch.data() + i * row);
        batch_labels[i] = labels[src];
      }
      if (batch_hook) batch_hook(batch, step);
      const double rho_t = cfg.rho_at(step);

      Tape tape;
      TrainForward fw = g.forward_train(tape, batch);
      NodeRef loss_node = ad::softmax_cross_entropy(tape, fw.logits,
                                                    batch_labels);
      const double loss = loss_node->value[0];
      if (!std::isfinite(loss))
        throw DivergenceError("training diverged: non-finite loss at step " +
                                  std::to_string(step),
                              std::move(last_good), result.monitor);
      loss_sum += loss;
      ++loss_count;

      std::map<std::string, Tensor> grads = tape.gradient_map(loss_node);
      for (const ParamRef& p : g.trainable_parameters()) {
        const Tensor& grad = grads.at(p.name());
        if (!grad.all_finite())
          throw DivergenceError(
              "training diverged: non-finite gradient for " + p.name() +
                  " at step " + std::to_string(step),
              std::move(last_good), result.monitor);
        const bool is_prunable_gamma =
            p.field == "gamma" && g.layer(p.layer).prunable;
        if (is_prunable_gamma) {
          *p.tensor = ista_step(*p.tensor, grad, mu_t,
                                gs.lambdas[lambda_of.at(p.layer)], rho_t);
        } else if (cfg.momentum > 0.0) {
          auto [it, fresh] = velocity.try_emplace(
              p.name(), Tensor(p.tensor->shape(), p.tensor->dtype()));
          (void)fresh;
          Tensor& v = it->second;
          for (std::int64_t i = 0; i < v.size(); ++i) {
            v[i] = cfg.momentum * v[i] + grad[i];
            (*p.tensor)[i] -= mu_t * v[i];
          }
          p.tensor->requantize();
        } else {
          for (std::int64_t i = 0; i < p.tensor->size(); ++i)
            (*p.tensor)[i] -= mu_t * grad[i];
          p.tensor->requantize();
        }
      }
      for (const auto& [layer_id, stats] : fw.moving_updates) {
        g.layer(layer_id).bn.moving_mean = stats.first;
        g.layer(layer_id).bn.moving_var = stats.second;
      }
      if (cfg.ema_decay > 0.0) result.ema.step(g);
    }

    EpochStats es;
    es.epoch = epoch;
    es.loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    es.sparsity_fraction = gs.sparsity(g);
    es.lasso_term = gs.lasso(g, cfg.rho_at(step > 0 ? step - 1 : 0));
    es.lr = mu_t;
    result.monitor.history.push_back(es);
    last_good = g;

    if (cfg.plateau_window > 0 &&
        result.monitor.plateaued(cfg.plateau_window, cfg.plateau_tol)) {
      result.hit_plateau = true;
      break;
    }
  }
  result.steps = step;
  return result;
}

std::vector<std::string> diagnose(const TrainMonitor& monitor) {
  std::vector<std::string> warnings;
  const auto& h = monitor.history;
  if (h.size() < 2) return warnings;

  // (a) Lasso decreasing linearly while sparsity stays near zero: the
  // penalty is shaving magnitude without reaching zero, so the gammas are
  // too large relative to it.
  {
    bool sparsity_near_zero = true;
    for (const EpochStats& e : h)
      if (e.sparsity_fraction > 0.01) sparsity_near_zero = false;
    std::vector<double> drops;
    bool all_drops_positive = true;
    for (size_t i = 1; i < h.size(); ++i) {
      const double d = h[i - 1].lasso_term - h[i].lasso_term;
      if (d <= 0.0) all_drops_positive = false;
      drops.push_back(d);
    }
    if (sparsity_near_zero && all_drops_positive && !drops.empty() &&
        h.front().lasso_term > 0.0 &&
        h.back().lasso_term < 0.9 * h.front().lasso_term) {
      double mean = 0.0;
      for (double d : drops) mean += d;
      mean /= static_cast<double>(drops.size());
      double var = 0.0;
      for (double d : drops) var += (d - mean) * (d - mean);
      var /= static_cast<double>(drops.size());
      const double cv = mean > 0.0 ? std::sqrt(var) / mean : 1e9;
      if (cv <= 0.25)
        warnings.push_back(
            "lasso term decreases linearly while sparsity stays near zero: "
            "decrease alpha");
    }
  }

  // (b) Sparsity saturating within the first epochs: the penalty dominates
  // and every channel is being zeroed.
  {
    const size_t probe = std::min<size_t>(h.size(), 3);
    for (size_t i = 0; i < probe; ++i) {
      if (h[i].sparsity_fraction >= 0.99) {
        warnings.push_back(
            "sparsity reached ~100% within the first epochs: decrease rho");
        break;
      }
    }
  }

  // (c) Cross-entropy stuck at the no-information level, or growing.
  {
    bool fired = false;
    for (const EpochStats& e : h)
      if (!std::isfinite(e.loss)) fired = true;
    if (!fired && monitor.chance_loss > 0.0) {
      const size_t tail = std::min<size_t>(h.size(), 3);
      double tail_mean = 0.0;
      for (size_t i = h.size() - tail; i < h.size(); ++i)
        tail_mean += h[i].loss;
      tail_mean /= static_cast<double>(tail);
      if (tail_mean >= 0.98 * monitor.chance_loss) fired = true;
      if (h.back().loss > 1.2 * h.front().loss &&
          h.back().loss > monitor.chance_loss)
        fired = true;
    }
    if (fired)
      warnings.push_back(
          "cross-entropy is non-informative or exploding: decrease mu or rho");
  }
  return warnings;
}

double suggest_alpha(const NetworkGraph& g, double mu, double rho) {
  if (!(mu > 0.0) || !(rho > 0.0)) return 1.0;
  const std::vector<int> prunable = g.prunable_layers();
  if (prunable.empty()) return 1.0;

  // a fresh network still has every gamma at its init value 1; the guideline
  // targets rebalancing a pretrained model, from scratch alpha stays 1
  bool fresh = true;
  for (int id : prunable) {
    const Tensor& gamma = g.layer(id).bn.gamma;
    for (std::int64_t i = 0; i < gamma.size(); ++i)
      if (gamma[i] != 1.0) fresh = false;
  }
  if (fresh) return 1.0;

  double log_sum = 0.0;
  int used = 0;
  for (int id : prunable) {
    const Tensor& gamma = g.layer(id).bn.gamma;
    double mean_abs = 0.0;
    for (std::int64_t i = 0; i < gamma.size(); ++i)
      mean_abs += std::fabs(gamma[i]);
    if (gamma.size() > 0) mean_abs /= static_cast<double>(gamma.size());
    if (mean_abs == 0.0) continue;  // fully pruned layer carries no signal
    const double candidate = 100.0 * mu * g.penalty_lambda(id) * rho / mean_abs;
    log_sum += std::log10(candidate);
    ++used;
  }
  if (used == 0) return 1.0;
  const double log_alpha = log_sum / used;
  const double grid[] = {-3.0, -2.0, -1.0, 0.0};
  double best = grid[0];
  for (double gpt : grid)
    if (std::fabs(log_alpha - gpt) < std::fabs(log_alpha - best)) best = gpt;
  return std::pow(10.0, best);
}

}  // namespace gprune
