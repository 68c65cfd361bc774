#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geoembed/network.hpp"

namespace geoembed {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter plus the shared step counter.
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::span<const Parameter> params, AdamConfig config = {});

  /// One bias-corrected Adam update of every parameter from its .grad.
  void step(std::span<Parameter> params, double lr);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  double lr0 = 1e-3;
  std::size_t plateau_patience = 10;
  double lr_factor = 10.0;
  std::size_t max_reductions = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double weight_decay = 0.0;
  /// Hard cap on epochs when the schedule has not finished.
  std::size_t max_epochs = 1000;
  /// Relative improvement needed to reset the plateau counter.
  double plateau_threshold = 1e-4;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double monitored_loss = 0.0;
  double lr = 0.0;
  std::size_t reductions = 0;
  bool reduced = false;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  bool schedule_finished = false;  // all reductions consumed
};

/// Callbacks that bind the loop to a concrete model and dataset.
struct TrainTask {
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  /// Forward+backward over the given training indices, accumulating
  /// gradients into the parameters; returns the mean batch loss.
  std::function<double(std::span<const std::size_t>)> train_batch;
  /// Mean loss over the given validation indices, no gradient.
  std::function<double(std::span<const std::size_t>)> eval_batch;
  /// Same over training indices. Without a validation set this inference-mode
  /// pass is what the schedule monitors; the running train-mode loss is too
  /// noisy under batch norm on small batches.
  std::function<double(std::span<const std::size_t>)> train_eval_batch;
  /// Parameters updated by Adam; gradients are zeroed before every batch.
  std::function<std::vector<Parameter>()> parameters;
  /// Captures / restores the best-validation state.
  std::function<std::vector<std::vector<double>>()> snapshot;
  std::function<void(const std::vector<std::vector<double>>&)> restore;
  /// Optional per-epoch observer.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam with reduce-on-plateau: the learning rate drops by lr_factor after
/// plateau_patience epochs without improvement of the monitored loss
/// (validation when available, otherwise training), and training stops after
/// max_reductions drops. The best monitored state is restored at the end.
TrainingLog train_loop(const TrainTask& task, const TrainConfig& config);

/// Plateau scheduler on its own, for driving arbitrary loss sequences.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(const TrainConfig& config);

  /// Feeds one epoch's monitored loss; returns true when the rate was reduced.
  bool observe(double loss);
  double lr() const noexcept { return lr_; }
  std::size_t reductions() const noexcept { return reductions_; }
  bool finished() const noexcept { return reductions_ >= config_.max_reductions; }
  bool improved_last() const noexcept { return improved_last_; }
  double best() const noexcept { return best_; }

 private:
  TrainConfig config_;
  double lr_;
  double best_;
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
  bool improved_last_ = false;
};

}  // namespace geoembed
