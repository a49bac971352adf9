#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "transukan/tensor.hpp"

namespace tukan {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-6;
  /// Coordinates checked per target; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradTarget {
  std::string name;
  Tensor tensor;
};

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double autodiff_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  /// Coordinates left out because x +- h flips the sign of a relu input.
  std::size_t kinks_skipped = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::vector<GradCheckItem> items;
};

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Compares reverse-mode gradients of `loss` with respect to every target
/// against central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
///
/// `loss` must read the targets' current values each call; targets are
/// perturbed in place and restored afterwards. A coordinate whose +-h
/// evaluation changes the sign pattern of any relu input straddles a kink
/// and is skipped (counted in kinks_skipped). Throws NumericError when the
/// loss evaluates to a non-finite value.
GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<GradTarget> targets,
                           const GradCheckOptions& options);

/// Single-input form: checks d f(x) / dx.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double tol);

}  // namespace tukan
