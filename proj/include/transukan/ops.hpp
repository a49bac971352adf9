#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transukan/tensor.hpp"

// Differentiable tensor operations. Every op checks its inputs, computes
// the forward result, verifies it is finite (NumericError otherwise), and
// records an adjoint on the active tape when any input requires a gradient.

namespace tukan {

// Elementwise, numpy-style broadcasting for binary ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor square(const Tensor& x);

enum class Elementwise { kRelu, kSilu, kSquare, kAdd, kMul, kScale };

/// Dispatches to the named op. Unary ops take one input, kAdd/kMul two;
/// kScale takes one input and uses `factor`.
Tensor elementwise(Elementwise op, std::span<const Tensor> inputs, double factor = 1.0);

/// [..., m, k] x [..., k, n] -> [..., m, n]; batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
/// x[..., k] * weight[n, k]^T + bias[n]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Cross-correlation. x[B,C,H,W], weight[O,C,kh,kw], bias[O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

/// [..., k] -> [...]; a rank-1 input yields shape [1].
Tensor mean_last_axis(const Tensor& x);
/// [B,C,H,W] -> [B,C,2H,2W], each pixel copied into a 2x2 block.
Tensor upsample_nearest_2x(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(std::span<const Tensor> inputs, int axis);

/// Sum / mean of all elements, shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Sign pattern of every relu input evaluated on this thread while a
/// KinkLogScope is active, in evaluation order.
struct KinkLog {
  std::vector<bool> positive;
};

class KinkLogScope {
 public:
  explicit KinkLogScope(KinkLog& log);
  ~KinkLogScope();
  KinkLogScope(const KinkLogScope&) = delete;
  KinkLogScope& operator=(const KinkLogScope&) = delete;

 private:
  KinkLog* previous_;
};

/// Throws NumericError naming `op` when `t` holds NaN or Inf.
void check_finite(const Tensor& t, const char* op);

}  // namespace tukan
