#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transukan/tensor.hpp"

namespace tukan {

/// Uniform grid of G + K bell-shaped bases over [range_lo, range_hi].
///
/// With h = (range_hi - range_lo) / G, basis i spans
/// [s_i, e_i] = [range_lo + (i - K) h, range_lo + (i + 1) h], so every basis
/// has width (K + 1) h and neighbours overlap when K >= 1.
struct KanGrid {
  std::size_t grid_size = 5;  // G
  std::size_t order = 3;      // K
  double range_lo = -1.0;
  double range_hi = 1.0;

  /// Validated constructor; throws ConfigError on G == 0 or an empty range.
  static KanGrid make(std::size_t grid_size, std::size_t order, double range_lo = -1.0, double range_hi = 1.0);

  std::size_t n_basis() const { return grid_size + order; }
  double step() const { return (range_hi - range_lo) / static_cast<double>(grid_size); }
  double lower(std::size_t i) const;
  double upper(std::size_t i) const;

  bool operator==(const KanGrid&) const = default;
};

// ---------------------------------------------------------------------------
// Scalar bases

/// [ReLU(e - x) ReLU(x - s)]^2 * 16 / (e - s)^4; peaks at 1 on the midpoint.
double relukan_basis_value(double x, double s, double e);
std::vector<double> relukan_basis(double x, const KanGrid& grid);

/// Uniform knot vector for a B-spline basis of Cox-de Boor `order`
/// (order 1 = piecewise constant), extended by order - 1 knots past each end
/// of the grid range. Yields grid_size + order - 1 basis functions.
std::vector<double> bspline_knots(const KanGrid& grid, int order);

/// All basis values at x (zeros outside the knot span). When `derivative`
/// is non-null it receives dB_i/dx.
std::vector<double> bspline_basis(double x, const KanGrid& grid, int order, std::vector<double>* derivative = nullptr);

/// w_b * silu(x) + w_s * sum_i c_i B_i(x) for a spline of the given degree.
double phi_edge(double x, double w_b, double w_s, std::span<const double> coeffs, const KanGrid& grid,
                int spline_degree);

// ---------------------------------------------------------------------------
// Differentiable basis expansions

enum class BasisLayout {
  kPerChannel,  // [..., c, n]
  kPerBasis,    // [..., n, c]
};

/// x[..., c] -> ReLU-KAN basis responses; differentiable in x.
Tensor relukan_expand(const Tensor& x, const KanGrid& grid, BasisLayout layout = BasisLayout::kPerChannel);
/// Mean over the basis axis of relukan_expand without materializing it;
/// output has the shape of x.
Tensor relukan_pooled(const Tensor& x, const KanGrid& grid);
/// x[..., c] -> [..., c, n] B-spline basis values; differentiable in x.
Tensor bspline_expand(const Tensor& x, const KanGrid& grid, int order);

// ---------------------------------------------------------------------------
// Layers

/// Per-edge phi(x) = w_b silu(x) + w_s sum_i c_i B_i(x).
struct BSplineKanLayer {
  std::size_t c_in = 0, c_out = 0;
  KanGrid grid;
  int spline_degree = 3;  // n_basis = G + spline_degree
  Tensor base_weight;     // [c_out, c_in]
  Tensor spline_weight;   // [c_out, c_in]
  Tensor coeffs;          // [c_out, c_in, n_basis]

  static BSplineKanLayer create(std::size_t c_in, std::size_t c_out, const KanGrid& grid, int spline_degree, Rng& rng);
  std::size_t n_basis() const { return grid.grid_size + static_cast<std::size_t>(spline_degree); }
  std::vector<Tensor> parameters() const { return {base_weight, spline_weight, coeffs}; }
};

/// Basis block (B, G+K, c_in) integrated by one full-size kernel per output.
struct ReLUKanLayer {
  std::size_t c_in = 0, c_out = 0;
  KanGrid grid;
  Tensor weight;  // [c_out, G+K, c_in]
  Tensor bias;    // [c_out]

  static ReLUKanLayer create(std::size_t c_in, std::size_t c_out, const KanGrid& grid, Rng& rng);
  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

/// Per-neuron average of its basis responses, squared, then one affine map
/// across neurons. The pooling coefficients are fixed at 1 / (G + K).
struct EfficientKanLayer {
  std::size_t c_in = 0, c_out = 0;
  KanGrid grid;
  Tensor weight;  // [c_out, c_in]
  Tensor bias;    // [c_out]
  /// Optional learnable per-basis scaling [c_in, G+K] applied before pooling.
  /// Off by default; not part of the reference layer.
  Tensor basis_weight;

  static EfficientKanLayer create(std::size_t c_in, std::size_t c_out, const KanGrid& grid, Rng& rng,
                                  bool learnable_basis_weights = false);
  std::vector<Tensor> parameters() const;
};

Tensor bspline_kan_forward(const Tensor& x, const BSplineKanLayer& layer);
Tensor relukan_forward(const Tensor& x, const ReLUKanLayer& layer);
Tensor efficientkan_forward(const Tensor& x, const EfficientKanLayer& layer);

/// Parameter counts split by stage: basis shaping, activation integration,
/// and the affine part (weights/bias mixing neurons after integration).
struct KanParamCount {
  std::size_t basis = 0;
  std::size_t integration = 0;
  std::size_t affine = 0;
  std::size_t total() const { return basis + integration + affine; }
};

KanParamCount kan_param_count(const BSplineKanLayer& layer);
KanParamCount kan_param_count(const ReLUKanLayer& layer);
KanParamCount kan_param_count(const EfficientKanLayer& layer);

/// Sum of numel over a parameter list.
std::size_t count_elements(const std::vector<Tensor>& params);

}  // namespace tukan
