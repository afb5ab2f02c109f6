// Copyright 2026 The ecp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ecp/csv.hpp"
#include "ecp/head.hpp"
#include "ecp/metrics.hpp"
#include "ecp/rng.hpp"
#include "ecp/types.hpp"

namespace ecp {

struct TrainConfig {
  double lr = 1e-5;  // paper-fidelity default; 1e-3 works better for head-only runs
  double weight_decay = 1e-4;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_min = 0.0;
  int epochs = 50;
  int batch_size = 32;
  int patience = 5;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr > 0)) throw std::runtime_error("train config: lr must be > 0");
  if (!(c.clip_norm > 0)) throw std::runtime_error("train config: clip_norm must be > 0");
  if (c.patience < 1) throw std::runtime_error("train config: patience must be >= 1");
  if (c.epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
  if (c.batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
  if (!(c.lr_min >= 0) || c.lr_min > c.lr)
    throw std::runtime_error("train config: lr_min must be in [0, lr]");
}

// Binary cross-entropy with the probability clamped away from 0 and 1.
inline double bce_loss(double p, int y) {
  constexpr double kEps = 1e-12;
  const double pc = std::clamp(p, kEps, 1.0 - kEps);
  return -(double(y) * std::log(pc) + (1.0 - double(y)) * std::log(1.0 - pc));
}

// Global-norm clipping across all enabled tensors; returns the pre-clip norm.
inline double clip_gradients(HeadParams& grads, double clip_norm) {
  double sq = 0;
  for_each_tensor(grads, [&](const char* name, const auto& t) {
    if (!t.allFinite())
      throw std::runtime_error(std::string("clip_gradients: non-finite gradient in ") +
                               name);
    sq += t.squaredNorm();
  });
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for_each_tensor(grads, [&](const char*, auto& t) { t *= scale; });
  }
  return norm;
}

inline double cosine_lr(long step, long total_steps, double lr, double lr_min = 0.0) {
  if (total_steps < 1) throw std::runtime_error("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::runtime_error("cosine_lr: step " + std::to_string(step) +
                             " outside [0, " + std::to_string(total_steps) + "]");
  return lr_min + 0.5 * (lr - lr_min) *
                      (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

struct AdamState {
  HeadParams m;  // first moment
  HeadParams v;  // second moment
  long t = 0;    // step count
};

inline AdamState make_adam_state(const HeadParams& params) {
  return AdamState{zeros_like(params), zeros_like(params), 0};
}

// Bias-corrected adaptive moment update with decoupled weight decay: the
// decay term lr_t * wd * theta is applied independently of the gradient term.
inline void optimizer_step(HeadParams& params, const HeadParams& grads,
                           AdamState& state, const TrainConfig& cfg, double lr_t) {
  if (params.mode != grads.mode || params.mode != state.m.mode)
    throw std::runtime_error("optimizer_step: parameter/gradient mode mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));

  std::vector<Eigen::Map<Eigen::ArrayXd>> ps, ms, vs;
  std::vector<Eigen::Map<const Eigen::ArrayXd>> gs;
  for_each_tensor(params, [&](const char*, auto& t) { ps.emplace_back(t.data(), t.size()); });
  for_each_tensor(grads, [&](const char*, const auto& t) { gs.emplace_back(t.data(), t.size()); });
  for_each_tensor(state.m, [&](const char*, auto& t) { ms.emplace_back(t.data(), t.size()); });
  for_each_tensor(state.v, [&](const char*, auto& t) { vs.emplace_back(t.data(), t.size()); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].size() != gs[i].size())
      throw std::runtime_error("optimizer_step: gradient shape mismatch");
    ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * gs[i];
    vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * gs[i].square();
    const auto m_hat = ms[i] / bc1;
    const auto v_hat = vs[i] / bc2;
    ps[i] -= lr_t * (m_hat / (v_hat.sqrt() + cfg.eps)) + lr_t * cfg.weight_decay * ps[i];
  }
}

struct HeadSpec {
  HeadMode mode = HeadMode::ProbeMlp;
  int num_queries = 12;  // M
  int proj_dim = 64;     // d
  int hidden = 768;
  double dropout_p = 0.1;
};

struct EpochStats {
  int epoch = 0;        // 1-based
  double train_loss = 0;  // mean clip loss over the epoch
  double val_ap = 0;
  double lr = 0;  // learning rate at the first step of the epoch
};

struct TrainResult {
  HeadParams params;  // parameters from the best-AP epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_ap = 0;
};

inline void write_history(const std::string& path,
                          const std::vector<EpochStats>& history) {
  auto out = open_out(path);
  out << "epoch,train_loss,val_ap,lr\n";
  for (const auto& e : history)
    out << e.epoch << ',' << format_double(e.train_loss) << ','
        << format_double(e.val_ap) << ',' << format_double(e.lr) << '\n';
}

// Epoch loop with seeded per-epoch shuffling, cosine-annealed AdamW steps and
// early stopping on validation AP. Deterministic given (datasets, config,
// spec): rng substreams are derived from the seed, gradients are reduced in
// batch order, and evaluation runs with dropout disabled.
inline TrainResult train(const std::vector<EmbeddingClip>& train_set,
                         const std::vector<EmbeddingClip>& val_set,
                         const TrainConfig& cfg, const HeadSpec& spec) {
  validate(cfg);
  if (train_set.empty()) throw std::runtime_error("train: empty training set");
  if (val_set.empty()) throw std::runtime_error("train: empty validation set");
  bool has_pos = false, has_neg = false;
  for (const auto& c : val_set) (c.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::runtime_error("train: validation set must contain both classes (AP undefined)");

  const int patch_dim = int(train_set[0].patches.cols());
  const Rng root(cfg.seed);
  HeadParams params = init_head(spec.mode, patch_dim, spec.num_queries, spec.proj_dim,
                                spec.hidden, spec.dropout_p, root.substream("init"));
  AdamState state = make_adam_state(params);

  const long n = long(train_set.size());
  const long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = long(cfg.epochs) * batches_per_epoch;

  TrainResult result;
  result.best_val_ap = -1.0;
  HeadParams best = params;
  int epochs_since_best = 0;
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto shuffle_rng = root.substream("shuffle", std::uint64_t(epoch));
    shuffle_rng.shuffle(order);

    const double lr_epoch_start = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
    double loss_sum = 0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = std::size_t(b) * cfg.batch_size;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      HeadParams grads = zeros_like(params);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& clip = train_set[order[k]];
        auto rng = root.substream("dropout",
                                  mix64(std::uint64_t(epoch), std::uint64_t(order[k])));
        const auto bw = head_backward(clip.patches, params, clip.label, true, rng);
        loss_sum += bce_loss(bw.p, clip.label);
        accumulate(grads, bw.grads);
      }
      const double inv = 1.0 / double(hi - lo);
      for_each_tensor(grads, [&](const char*, auto& t) { t *= inv; });
      clip_gradients(grads, cfg.clip_norm);
      const double lr_t = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
      optimizer_step(params, grads, state, cfg, lr_t);
      ++step;
    }

    std::vector<std::pair<double, int>> scored;
    scored.reserve(val_set.size());
    for (const auto& c : val_set)
      scored.emplace_back(head_forward(c.patches, params), c.label);
    const double val_ap = average_precision(scored);

    result.history.push_back(
        EpochStats{epoch, loss_sum / double(n), val_ap, lr_epoch_start});
    if (val_ap > result.best_val_ap) {
      result.best_val_ap = val_ap;
      result.best_epoch = epoch;
      best = params;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }
  result.params = std::move(best);
  return result;
}

}  // namespace ecp
