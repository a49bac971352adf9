#include "transukan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "transukan/error.hpp"
#include "transukan/ops.hpp"
#include "transukan/tape.hpp"

namespace tukan {

namespace {

// Class axis is 1; everything after it is the pixel plane.
struct ClassLayout {
  std::size_t batch = 0, classes = 0, plane = 0;
};

ClassLayout class_layout(const Tensor& t, std::size_t n_labels, const char* op) {
  if (!t.defined() || t.rank() < 2) throw DimensionError(std::string(op) + ": expected [B, n, ...] input");
  ClassLayout l;
  l.batch = t.dim(0);
  l.classes = t.dim(1);
  l.plane = t.numel() / (l.batch * l.classes);
  if (l.batch * l.plane != n_labels) {
    throw DimensionError(std::string(op) + ": " + std::to_string(n_labels) + " labels for input " +
                         shape_str(t.shape()));
  }
  return l;
}

void check_labels(std::span<const Label> labels, std::size_t classes, const char* op) {
  for (Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError(std::string(op) + ": label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                      ")");
    }
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const Label> labels, std::span<const double> class_weights) {
  const ClassLayout l = class_layout(logits, labels.size(), "cross_entropy");
  check_labels(labels, l.classes, "cross_entropy");
  if (!class_weights.empty() && class_weights.size() != l.classes) {
    throw DimensionError("cross_entropy: " + std::to_string(class_weights.size()) + " class weights for " +
                         std::to_string(l.classes) + " classes");
  }
  auto x = logits.data();
  // Softmax probabilities are kept for the adjoint: d/dz = w (p - onehot) / W.
  std::vector<double> probs(logits.numel());
  double total = 0.0, weight_sum = 0.0;
  for (std::size_t b = 0; b < l.batch; ++b) {
    for (std::size_t px = 0; px < l.plane; ++px) {
      const std::size_t base = b * l.classes * l.plane + px;
      double mx = x[base];
      for (std::size_t c = 1; c < l.classes; ++c) mx = std::max(mx, x[base + c * l.plane]);
      double z = 0.0;
      for (std::size_t c = 0; c < l.classes; ++c) z += std::exp(x[base + c * l.plane] - mx);
      const double log_z = mx + std::log(z);
      for (std::size_t c = 0; c < l.classes; ++c) probs[base + c * l.plane] = std::exp(x[base + c * l.plane] - log_z);
      const Label y = labels[b * l.plane + px];
      const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
      total += w * (log_z - x[base + static_cast<std::size_t>(y) * l.plane]);
      weight_sum += w;
    }
  }
  if (!(weight_sum > 0.0)) throw DataError("cross_entropy: total class weight is zero");
  Tensor out = Tensor::scalar(total / weight_sum);
  check_finite(out, "cross_entropy");
  if (should_record({&logits})) {
    std::vector<Label> ys(labels.begin(), labels.end());
    std::vector<double> cw(class_weights.begin(), class_weights.end());
    record_op(out, [logits, l, weight_sum, probs = std::move(probs), ys = std::move(ys),
                    cw = std::move(cw)](std::span<const double> g) mutable {
      auto lg = logits.grad_buffer();
      for (std::size_t b = 0; b < l.batch; ++b) {
        for (std::size_t px = 0; px < l.plane; ++px) {
          const Label y = ys[b * l.plane + px];
          const double w = cw.empty() ? 1.0 : cw[static_cast<std::size_t>(y)];
          const double s = g[0] * w / weight_sum;
          const std::size_t base = b * l.classes * l.plane + px;
          for (std::size_t c = 0; c < l.classes; ++c) {
            const double onehot = static_cast<Label>(c) == y ? 1.0 : 0.0;
            lg[base + c * l.plane] += s * (probs[base + c * l.plane] - onehot);
          }
        }
      }
    });
  }
  return out;
}

Tensor dice_loss(const Tensor& probs, std::span<const Label> labels) {
  const ClassLayout l = class_layout(probs, labels.size(), "dice_loss");
  check_labels(labels, l.classes, "dice_loss");
  if (l.classes < 2) throw DimensionError("dice_loss: needs at least two classes");
  auto p = probs.data();
  const std::size_t fg = l.classes - 1;
  std::vector<double> inter(fg, 0.0), psum(fg, 0.0), gsum(fg, 0.0);
  for (std::size_t b = 0; b < l.batch; ++b) {
    for (std::size_t c = 1; c < l.classes; ++c) {
      for (std::size_t px = 0; px < l.plane; ++px) {
        const double pv = p[(b * l.classes + c) * l.plane + px];
        const bool hit = labels[b * l.plane + px] == static_cast<Label>(c);
        psum[c - 1] += pv;
        if (hit) {
          inter[c - 1] += pv;
          gsum[c - 1] += 1.0;
        }
      }
    }
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < fg; ++k) {
    loss += 1.0 - (2.0 * inter[k] + kDiceSmooth) / (psum[k] + gsum[k] + kDiceSmooth);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(fg));
  check_finite(out, "dice_loss");
  if (should_record({&probs})) {
    std::vector<Label> ys(labels.begin(), labels.end());
    record_op(out, [probs, l, fg, inter, psum, gsum, ys = std::move(ys)](std::span<const double> g) mutable {
      auto pg = probs.grad_buffer();
      for (std::size_t c = 1; c < l.classes; ++c) {
        const std::size_t k = c - 1;
        const double den = psum[k] + gsum[k] + kDiceSmooth;
        const double num = 2.0 * inter[k] + kDiceSmooth;
        // d/dp [1 - num/den] = -(2 g den - num) / den^2
        const double scale_hit = -g[0] * (2.0 * den - num) / (den * den) / static_cast<double>(fg);
        const double scale_miss = g[0] * num / (den * den) / static_cast<double>(fg);
        for (std::size_t b = 0; b < l.batch; ++b) {
          for (std::size_t px = 0; px < l.plane; ++px) {
            const bool hit = ys[b * l.plane + px] == static_cast<Label>(c);
            pg[(b * l.classes + c) * l.plane + px] += hit ? scale_hit : scale_miss;
          }
        }
      }
    });
  }
  return out;
}

Tensor combined_loss(const Tensor& logits, std::span<const Label> labels, const LossWeights& weights) {
  if (weights.ce < 0.0 || weights.dice < 0.0 || !(weights.ce + weights.dice > 0.0)) {
    throw ConfigError("combined_loss: weights must be >= 0 with a positive sum");
  }
  const Tensor ce = cross_entropy(logits, labels);
  if (logits.dim(1) != 2 || weights.dice == 0.0) return weights.ce == 1.0 ? ce : scale(ce, weights.ce);
  const Tensor dice = dice_loss(softmax(logits, 1), labels);
  if (weights.ce == 0.0) return scale(dice, weights.dice);
  return add(scale(ce, weights.ce), scale(dice, weights.dice));
}

std::vector<Label> predict_labels(const Tensor& logits) {
  const std::size_t B = logits.dim(0), n = logits.dim(1);
  const std::size_t plane = logits.numel() / (B * n);
  std::vector<Label> out(B * plane);
  auto x = logits.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t px = 0; px < plane; ++px) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < n; ++c) {
        if (x[(b * n + c) * plane + px] > x[(b * n + best) * plane + px]) best = c;
      }
      out[b * plane + px] = static_cast<Label>(best);
    }
  }
  return out;
}

}  // namespace tukan
