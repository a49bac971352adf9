#include "transukan/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

#include "transukan/error.hpp"
#include "transukan/tape.hpp"

namespace tukan {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

void check_samples(const std::vector<SegSample>& samples, const ModelConfig& mc, const char* what) {
  for (const SegSample& s : samples) {
    if (s.image.rank() != 3 || s.image.dim(0) != mc.in_channels || s.height != mc.image_height ||
        s.width != mc.image_width || s.mask.size() != s.height * s.width) {
      throw DimensionError(std::string(what) + ": sample " + shape_str(s.image.shape()) +
                           " does not match the model input [" + std::to_string(mc.in_channels) + "," +
                           std::to_string(mc.image_height) + "," + std::to_string(mc.image_width) + "]");
    }
    for (Label l : s.mask) {
      if (l < 0 || static_cast<std::size_t>(l) >= mc.n_classes) {
        throw DataError(std::string(what) + ": mask label " + std::to_string(l) + " outside [0, " +
                        std::to_string(mc.n_classes) + ")");
      }
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (warmup_epochs >= epochs) throw ConfigError("train: warmup_epochs must be < epochs");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr_base > 0.0) || !std::isfinite(lr_base)) throw ConfigError("train: lr_base must be positive");
  if (loss.ce < 0.0 || loss.dice < 0.0 || !(loss.ce + loss.dice > 0.0)) {
    throw ConfigError("train: loss weights must be >= 0 with a positive sum");
  }
  if (n_classes < 2) throw ConfigError("train: n_classes must be >= 2");
}

bool same_trajectory(const TrainHistory& a, const TrainHistory& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const EpochRecord &x = a[i], &y = b[i];
    if (x.epoch != y.epoch || x.lr != y.lr || x.train_loss != y.train_loss || x.val_dice != y.val_dice ||
        x.val_iou != y.val_iou || x.val_acc != y.val_acc) {
      return false;
    }
  }
  return true;
}

void write_history_csv(std::ostream& out, const TrainHistory& history) {
  out << "epoch,lr,train_loss,val_dice,val_iou,val_acc,seconds\n";
  char buf[256];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.epoch, r.lr, r.train_loss, r.val_dice,
                  r.val_iou, r.val_acc, r.seconds);
    out << buf;
  }
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  write_history_csv(out, history);
  if (!out) throw IoError(path.string() + ": write failed");
}

Tensor stack_images(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("stack_images: empty batch");
  const Shape& s = samples[indices.front()].image.shape();
  Tensor out({indices.size(), s[0], s[1], s[2]});
  auto dst = out.data();
  const std::size_t per = shape_numel(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = samples[indices[i]].image.data();
    if (src.size() != per) throw DimensionError("stack_images: samples differ in shape");
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<Label> stack_labels(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices) {
  std::vector<Label> out;
  for (std::size_t i : indices) out.insert(out.end(), samples[i].mask.begin(), samples[i].mask.end());
  return out;
}

EvalResult evaluate(const TransUKanModel& model, const std::vector<SegSample>& samples, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be >= 1");
  check_samples(samples, model.config, "evaluate");
  NoGradScope no_grad;
  MetricAccumulator acc(model.config.n_classes);
  double seconds = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor images = stack_images(samples, idx);
    const auto t0 = Clock::now();
    const Tensor logits = forward(images, model);
    seconds += elapsed(t0);
    acc.add(predict_labels(logits), stack_labels(samples, idx));
  }
  EvalResult r;
  r.metrics = acc.result();
  r.images = samples.size();
  r.seconds_per_image = samples.empty() ? 0.0 : seconds / static_cast<double>(samples.size());
  return r;
}

TrainHistory train(TransUKanModel& model, const std::vector<SegSample>& train_set,
                   const std::vector<SegSample>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.n_classes != model.config.n_classes) {
    throw ConfigError("train: config has " + std::to_string(cfg.n_classes) + " classes, model " +
                      std::to_string(model.config.n_classes));
  }
  if (train_set.empty()) throw ConfigError("train: empty training split");
  if (val_set.empty()) throw ConfigError("train: empty validation split");
  check_samples(train_set, model.config, "train");
  check_samples(val_set, model.config, "train");

  std::vector<Tensor> params = model.parameters();
  for (Tensor& p : params) p.set_requires_grad();
  AdamState adam = make_adam_state(params, cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = lr_at(epoch, cfg.schedule());
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<SegSample> batch;
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(cfg.augment ? augment(train_set[order[i]], rng) : train_set[order[i]]);
        idx.push_back(i - start);
      }
      const Tensor images = stack_images(batch, idx);
      const std::vector<Label> labels = stack_labels(batch, idx);
      for (Tensor& p : params) p.zero_grad();
      Tape tape;
      double value = 0.0;
      {
        TapeScope scope(tape);
        const Tensor loss = combined_loss(forward(images, model), labels, cfg.loss);
        value = loss.item();
        if (!std::isfinite(value)) throw NumericError("train: loss is not finite at epoch " + std::to_string(epoch));
        tape.backward(loss);
      }
      adam_step(params, adam, lr);
      loss_sum += value * static_cast<double>(idx.size());
    }
    const EvalResult val = evaluate(model, val_set, cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_dice = val.metrics.mean_dice;
    rec.val_iou = val.metrics.mean_iou;
    rec.val_acc = val.metrics.pixel_accuracy;
    rec.seconds = elapsed(t0);
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

TrainHistory train(TransUKanModel& model, const std::vector<SegSample>& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  const DataSplit split = split_indices(data.size(), cfg.seed);
  std::vector<SegSample> train_set, val_set;
  for (std::size_t i : split.train) train_set.push_back(data[i]);
  for (std::size_t i : split.val) val_set.push_back(data[i]);
  if (train_set.empty()) throw ConfigError("train: empty training split (" + std::to_string(data.size()) + " samples)");
  return train(model, train_set, val_set.empty() ? train_set : val_set, cfg, on_epoch);
}

}  // namespace tukan
