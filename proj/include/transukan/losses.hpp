#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transukan/tensor.hpp"

namespace tukan {

using Label = std::int32_t;

inline constexpr double kDiceSmooth = 1e-6;

/// Mean negative log-softmax of the true class per pixel.
///
/// `logits` is [B, n, H, W] (or [N, n]); `labels` holds B*H*W (or N) class
/// indices in row-major pixel order. With `class_weights`, the mean is
/// weighted by the weight of each pixel's label. Throws DataError on a
/// label outside [0, n).
Tensor cross_entropy(const Tensor& logits, std::span<const Label> labels,
                     std::span<const double> class_weights = {});

/// 1 - (2 sum(p g) + s) / (sum p + sum g + s), averaged over foreground
/// classes 1..n-1, with sums over the whole batch. `probs` is [B, n, H, W].
Tensor dice_loss(const Tensor& probs, std::span<const Label> labels);

struct LossWeights {
  double ce = 0.5;
  double dice = 0.5;
};

/// w_ce CE + w_dice Dice(softmax(logits)) for binary tasks; cross-entropy
/// only when there are more than two classes.
Tensor combined_loss(const Tensor& logits, std::span<const Label> labels, const LossWeights& weights);

/// Per-pixel argmax over the class axis of [B, n, H, W] logits.
std::vector<Label> predict_labels(const Tensor& logits);

}  // namespace tukan
