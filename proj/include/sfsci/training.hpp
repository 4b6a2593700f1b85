#pragma once

// Shared mini-batch loop: shuffles sample indices per epoch, accumulates
// gradients of a per-sample loss over each batch, and takes one Adam step
// per batch. Stops at the first non-finite loss and restores the parameters
// from before the failing step.

#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "sfsci/optim.hpp"

namespace sfsci {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 2;
  double lr_init = 4e-4;
  LrSchedule lr_schedule = LrSchedule::cosine_annealing;
  std::uint64_t seed = 0;

  void validate(const std::string& where = "train") const {
    if (batch_size < 1) throw ConfigError(where + ".batch_size must be >= 1");
    if (!(lr_init > 0)) throw ConfigError(where + ".lr_init must be > 0");
  }
  bool operator==(const TrainConfig&) const = default;
};

struct LoopResult {
  std::vector<double> epoch_losses;
  bool aborted = false;
  std::string message;
};

template <typename T, typename LossFn>
LoopResult run_training_loop(std::vector<Parameter<T>*> params, std::size_t num_samples, const TrainConfig& cfg,
                             LossFn&& sample_loss, const std::function<void(std::size_t)>& on_epoch_end = {}) {
  cfg.validate();
  LoopResult res;
  if (cfg.epochs == 0 || num_samples == 0) return res;
  Adam<T> opt(params, cfg.lr_init);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(num_samples);
  const std::size_t batches = (num_samples + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  std::size_t step = 0;
  std::vector<Tensor<T>> last_good;
  auto snapshot = [&] {
    last_good.clear();
    for (auto* p : params) last_good.push_back(p->value());
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->mutable_value() = last_good[i];
  };
  snapshot();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(num_samples, lo + cfg.batch_size);
      opt.zero_grad();
      double batch_sum = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        Var<T> loss;
        double v = std::numeric_limits<double>::quiet_NaN();
        std::string why = "non-finite loss";
        try {
          loss = sample_loss(order[i]);
          v = static_cast<double>(loss.item());
        } catch (const DomainError& e) {
          why = e.what();
        } catch (const ParameterError& e) {
          why = e.what();
        }
        if (!std::isfinite(v)) {
          std::ostringstream os;
          os << why << " at epoch " << epoch << ", batch " << b << ", sample " << order[i];
          res.aborted = true;
          res.message = os.str();
          opt.zero_grad();
          restore();
          return res;
        }
        batch_sum += v;
        backward(loss);
      }
      snapshot();
      opt.set_lr(scheduled_lr(cfg.lr_init, cfg.lr_schedule, step, total_steps));
      opt.step(static_cast<T>(1.0 / static_cast<double>(hi - lo)));
      epoch_sum += batch_sum;
    }
    res.epoch_losses.push_back(epoch_sum / static_cast<double>(num_samples));
    if (on_epoch_end) on_epoch_end(epoch);
  }
  opt.zero_grad();
  return res;
}

}  // namespace sfsci
