#include "geoembed/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "geoembed/error.hpp"
#include "geoembed/random.hpp"

namespace geoembed {

AdamState::AdamState(std::span<const Parameter> params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void AdamState::step(std::span<Parameter> params, double lr) {
  if (params.size() != m_.size()) {
    fail(ErrorCode::ShapeMismatch, "Adam state does not match parameter list");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != p.value.size()) {
      fail(ErrorCode::ShapeMismatch, "Adam moment shape mismatch for " + p.name);
    }
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = p.grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(lr0 > 0) || plateau_patience == 0 || !(lr_factor > 1.0) || max_reductions == 0 ||
      batch_size == 0 || max_epochs == 0 || weight_decay < 0 || plateau_threshold < 0) {
    fail(ErrorCode::ConfigInvalid, "training configuration has a non-positive setting");
  }
  if (weight_decay != 0.0) {
    fail(ErrorCode::ConfigInvalid, "weight decay is not supported");
  }
}

PlateauSchedule::PlateauSchedule(const TrainConfig& config)
    : config_(config), lr_(config.lr0), best_(std::numeric_limits<double>::infinity()) {}

bool PlateauSchedule::observe(double loss) {
  improved_last_ = loss < best_ * (1.0 - config_.plateau_threshold) ||
                   best_ == std::numeric_limits<double>::infinity();
  if (improved_last_) {
    best_ = loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < config_.plateau_patience) return false;
  bad_epochs_ = 0;
  ++reductions_;
  lr_ /= config_.lr_factor;
  return true;
}

TrainingLog train_loop(const TrainTask& task, const TrainConfig& config) {
  config.validate();
  if (task.train_size == 0) {
    fail(ErrorCode::InsufficientTrainingData, "training set is empty");
  }
  auto params = task.parameters();
  AdamState adam(params);
  PlateauSchedule schedule(config);
  Rng rng(config.seed);
  TrainingLog log;
  std::vector<std::size_t> order(task.train_size);
  std::vector<std::size_t> eval_order(std::max(task.train_size, task.val_size));
  std::iota(eval_order.begin(), eval_order.end(), std::size_t{0});
  std::vector<std::vector<double>> best_state;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = schedule.lr();
    double train_sum = 0.0;
    for (std::size_t first = 0, count = 0; first < order.size(); first += count) {
      count = std::min(config.batch_size, order.size() - first);
      // A trailing batch of one cannot be batch-normalized; fold it in.
      if (order.size() - first - count == 1) ++count;
      for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
      const double loss =
          task.train_batch(std::span<const std::size_t>(order).subspan(first, count));
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << " (lr " << lr
            << "); the output activations have likely saturated - restart with a "
               "different seed or smaller initial weights";
        fail(ErrorCode::NonFiniteLoss, msg.str());
      }
      train_sum += loss * static_cast<double>(count);
      adam.step(params, lr);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_sum / static_cast<double>(order.size());
    double monitored = rec.train_loss;
    auto full_pass = [&](const auto& fn, std::size_t n) {
      double sum = 0.0;
      for (std::size_t first = 0; first < n; first += config.batch_size) {
        const std::size_t count = std::min(config.batch_size, n - first);
        sum += fn(std::span<const std::size_t>(eval_order).subspan(first, count)) *
               static_cast<double>(count);
      }
      return sum / static_cast<double>(n);
    };
    if (task.val_size > 0) {
      rec.val_loss = full_pass(task.eval_batch, task.val_size);
      monitored = rec.val_loss;
    } else {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      if (task.train_eval_batch) monitored = full_pass(task.train_eval_batch, task.train_size);
    }
    rec.monitored_loss = monitored;
    if (!std::isfinite(monitored)) {
      fail(ErrorCode::NonFiniteLoss,
           "non-finite monitored loss at epoch " + std::to_string(epoch) +
               "; embeddings have likely saturated");
    }
    rec.reduced = schedule.observe(monitored);
    rec.reductions = schedule.reductions();
    if (schedule.improved_last()) {
      log.best_epoch = epoch;
      log.best_loss = monitored;
      if (task.snapshot) best_state = task.snapshot();
    }
    log.epochs.push_back(rec);
    if (task.on_epoch) task.on_epoch(rec);
    if (schedule.finished()) {
      log.schedule_finished = true;
      break;
    }
  }
  if (task.restore && !best_state.empty()) task.restore(best_state);
  return log;
}

}  // namespace geoembed
