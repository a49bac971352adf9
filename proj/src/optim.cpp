#include "transukan/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "transukan/error.hpp"

namespace tukan {

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  if (params.size() != state.m.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (params[i].numel() != state.m[i].size()) throw ContractError("adam_step: moment shape mismatch");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * p[j]);
    }
  }
}

double lr_at(std::size_t epoch, const LrSchedule& s) {
  if (s.warmup_epochs >= s.epochs) throw ConfigError("lr_at: warmup_epochs must be < epochs");
  if (epoch >= s.epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.epochs) + ")");
  }
  if (epoch < s.warmup_epochs) {
    return s.lr_base * (static_cast<double>(epoch + 1) / static_cast<double>(s.warmup_epochs));
  }
  const std::size_t span = s.epochs - s.warmup_epochs - 1;
  if (span == 0) return s.lr_base;
  const double t = static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(span);
  return s.lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace tukan
