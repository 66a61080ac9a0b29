#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/neural/optim.hpp"
#include "nmrom/neural/rng.hpp"
#include "nmrom/neural/tensor.hpp"

namespace nmrom::nn {

struct TrainConfig {
  int epochs = 2000;
  Index batch_size = 20;
  double lr0 = 1e-3;
  int lr_halving_patience = 200;
  double lr_min = 1e-6;
  double weight_decay = 1e-6;  // lambda_1 in lambda_1 ||theta||^2
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (!(lr_min > 0.0) || !(lr0 > lr_min)) throw ConfigError("train: need lr0 > lr_min > 0");
    if (lr_halving_patience < 1) throw ConfigError("train: patience must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be non-negative");
  }
};

struct TrainHistory {
  std::vector<double> loss;  // per epoch, sample-weighted mean of batch losses incl. penalty
  std::vector<double> lr;    // learning rate used during each epoch
  long optimizer_steps = 0;
  bool aborted = false;
  std::string message;
};

/// Mini-batch Adam loop. `batch_loss(indices)` must return the mean data
/// loss over the batch and accumulate its gradients into the (zeroed)
/// parameter gradients. The learning rate halves after `patience` epochs
/// without a new best loss and never drops below `lr_min`.
template <class BatchLoss>
TrainHistory train_loop(const std::vector<Param*>& params, Index n_samples, const TrainConfig& cfg,
                        BatchLoss&& batch_loss, AdamState* state = nullptr,
                        const std::function<void(int, double)>& on_epoch = {}) {
  cfg.validate();
  if (n_samples == 0) throw ConfigError("train: empty dataset");
  AdamState local;
  AdamState& adam = state ? *state : local;
  TrainHistory hist;
  double lr = cfg.lr0;
  double best = INFINITY;
  int since_best = 0;
  std::vector<Index> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_permutation(n_samples, cfg.seed, static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    for (Index start = 0; start < n_samples; start += cfg.batch_size) {
      const Index end = std::min(n_samples, start + cfg.batch_size);
      batch.assign(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
      for (Param* p : params) p->zero_grad();
      double loss = batch_loss(batch);
      loss += add_weight_penalty(params, cfg.weight_decay);
      if (!std::isfinite(loss)) {
        hist.aborted = true;
        hist.message = "non-finite loss at epoch " + std::to_string(epoch);
        return hist;
      }
      adam_step(params, adam, lr);
      ++hist.optimizer_steps;
      total += loss * static_cast<double>(end - start);
    }
    const double epoch_loss = total / static_cast<double>(n_samples);
    hist.loss.push_back(epoch_loss);
    hist.lr.push_back(lr);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (epoch_loss < best) {
      best = epoch_loss;
      since_best = 0;
    } else if (++since_best >= cfg.lr_halving_patience) {
      lr = std::max(0.5 * lr, cfg.lr_min);
      since_best = 0;
    }
  }
  return hist;
}

}  // namespace nmrom::nn
