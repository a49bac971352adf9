#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "transukan/data.hpp"
#include "transukan/losses.hpp"
#include "transukan/metrics.hpp"
#include "transukan/model.hpp"
#include "transukan/optim.hpp"

namespace tukan {

struct TrainConfig {
  double lr_base = 1e-4;
  std::size_t epochs = 200;
  std::size_t warmup_epochs = 10;
  std::size_t batch_size = 8;
  LossWeights loss;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t n_classes = 2;
  bool augment = true;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
  LrSchedule schedule() const { return {lr_base, epochs, warmup_epochs}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double val_iou = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

/// Records equal in every field except wall-clock seconds.
bool same_trajectory(const TrainHistory& a, const TrainHistory& b);

/// epoch,lr,train_loss,val_dice,val_iou,val_acc,seconds
void write_history_csv(std::ostream& out, const TrainHistory& history);
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on `train_set`, scoring `val_set` after every epoch. Shuffling
/// and augmentation draw from a generator seeded with cfg.seed. Throws
/// ConfigError on an empty training set and NumericError when the loss
/// stops being finite.
TrainHistory train(TransUKanModel& model, const std::vector<SegSample>& train_set,
                   const std::vector<SegSample>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Splits `data` 8:1:1 with cfg.seed and trains on the first two parts.
/// When the validation part is empty the training part is scored instead.
TrainHistory train(TransUKanModel& model, const std::vector<SegSample>& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

struct EvalResult {
  SegMetrics metrics;
  double seconds_per_image = 0.0;
  std::size_t images = 0;
};

/// Inference without a tape over `samples`, metrics on pooled counts.
EvalResult evaluate(const TransUKanModel& model, const std::vector<SegSample>& samples, std::size_t batch_size = 8);

/// Stacks samples[indices] into an image batch [B,C,H,W] and flat labels.
Tensor stack_images(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices);
std::vector<Label> stack_labels(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices);

}  // namespace tukan
