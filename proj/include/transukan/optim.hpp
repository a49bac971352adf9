#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transukan/tensor.hpp"

namespace tukan {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config = {});

/// One bias-corrected Adam update with decoupled weight decay:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// Reads each parameter's gradient buffer; throws ContractError when a
/// parameter has none or the state does not match the parameter list.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

struct LrSchedule {
  double lr_base = 1e-4;
  std::size_t epochs = 200;
  std::size_t warmup_epochs = 10;
};

/// Linear warmup to lr_base over the first warmup_epochs, then a half
/// cosine that reaches exactly zero at the final epoch.
double lr_at(std::size_t epoch, const LrSchedule& schedule);

}  // namespace tukan
