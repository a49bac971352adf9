#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "transukan/gradcheck.hpp"
#include "transukan/tensor.hpp"

namespace tukan {

enum class GradScope { kOps, kLayers, kBlocks, kModel, kAll };

/// ops, layers, blocks, model or all; throws ConfigError otherwise.
GradScope parse_grad_scope(const std::string& name);

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kCompositeTolerance = 1e-4;

struct SuiteOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double h = 1e-5;
  /// Adds a scale op whose adjoint is off by 1%; the suite must then fail.
  bool inject_fault = false;
};

struct SuiteItemResult {
  std::string scope;
  std::string name;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_target;
  double autodiff_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
  bool pass = false;
};

struct SuiteResult {
  std::vector<SuiteItemResult> items;
  bool pass = false;
  double seconds = 0.0;
};

using SuiteProgress = std::function<void(const SuiteItemResult&)>;

SuiteResult run_gradcheck_suite(GradScope scope, const SuiteOptions& options, const SuiteProgress& progress = {});

/// x * s with a backward pass that scales by 1.01 * s. Negative control only.
Tensor faulty_scale(const Tensor& x, double s);

}  // namespace tukan
