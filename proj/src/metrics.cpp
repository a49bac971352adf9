#include "transukan/metrics.hpp"

#include <string>

#include "transukan/error.hpp"

namespace tukan {

MetricAccumulator::MetricAccumulator(std::size_t n_classes)
    : n_classes_(n_classes), inter_(n_classes, 0), pred_count_(n_classes, 0), truth_count_(n_classes, 0) {
  if (n_classes < 2) throw ConfigError("metrics: need at least two classes");
}

void MetricAccumulator::add(std::span<const Label> pred, std::span<const Label> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metrics: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                         std::to_string(truth.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Label p = pred[i], t = truth[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= n_classes_ || static_cast<std::size_t>(t) >= n_classes_) {
      throw DataError("metrics: label outside [0, " + std::to_string(n_classes_) + ")");
    }
    ++pred_count_[static_cast<std::size_t>(p)];
    ++truth_count_[static_cast<std::size_t>(t)];
    if (p == t) {
      ++inter_[static_cast<std::size_t>(p)];
      ++correct_;
    }
  }
  total_ += pred.size();
}

SegMetrics MetricAccumulator::result() const {
  SegMetrics m;
  for (std::size_t c = 0; c < n_classes_; ++c) {
    const double inter = static_cast<double>(inter_[c]);
    const double sum = static_cast<double>(pred_count_[c] + truth_count_[c]);
    const double uni = sum - inter;
    m.dice.push_back(sum == 0.0 ? 1.0 : 2.0 * inter / sum);
    m.iou.push_back(uni == 0.0 ? 1.0 : inter / uni);
    // One-vs-rest: pixels where (pred == c) agrees with (truth == c).
    const double wrong = static_cast<double>(pred_count_[c] + truth_count_[c] - 2 * inter_[c]);
    m.accuracy.push_back(total_ == 0 ? 1.0 : 1.0 - wrong / static_cast<double>(total_));
  }
  for (std::size_t c = 1; c < n_classes_; ++c) {
    m.mean_dice += m.dice[c];
    m.mean_iou += m.iou[c];
  }
  m.mean_dice /= static_cast<double>(n_classes_ - 1);
  m.mean_iou /= static_cast<double>(n_classes_ - 1);
  m.pixel_accuracy = total_ == 0 ? 1.0 : static_cast<double>(correct_) / static_cast<double>(total_);
  return m;
}

SegMetrics seg_metrics(std::span<const Label> pred, std::span<const Label> truth, std::size_t n_classes) {
  MetricAccumulator acc(n_classes);
  acc.add(pred, truth);
  return acc.result();
}

}  // namespace tukan
