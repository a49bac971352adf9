#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transukan/losses.hpp"

namespace tukan {

struct SegMetrics {
  std::vector<double> dice;      // per class
  std::vector<double> iou;       // per class
  std::vector<double> accuracy;  // per class, one-vs-rest pixel accuracy
  double mean_dice = 0.0;        // over foreground classes 1..n-1
  double mean_iou = 0.0;         // over foreground classes 1..n-1
  double pixel_accuracy = 0.0;   // correct pixels / total
};

/// Accumulates per-class intersection/union counts over any number of
/// label maps so a dataset is scored on pooled counts.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t n_classes);

  /// Throws DimensionError on length mismatch and DataError on a label
  /// outside [0, n_classes).
  void add(std::span<const Label> pred, std::span<const Label> truth);
  SegMetrics result() const;
  std::size_t n_classes() const { return n_classes_; }

 private:
  std::size_t n_classes_;
  std::vector<std::uint64_t> inter_, pred_count_, truth_count_;
  std::uint64_t correct_ = 0, total_ = 0;
};

/// Dice = 2|P&G| / (|P|+|G|), IoU = |P&G| / |P|G|; a class absent from both
/// maps scores 1.0.
SegMetrics seg_metrics(std::span<const Label> pred, std::span<const Label> truth, std::size_t n_classes);

}  // namespace tukan
