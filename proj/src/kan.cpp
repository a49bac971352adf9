#include "transukan/kan.hpp"

#include <cmath>
#include <string>

#include "transukan/error.hpp"
#include "transukan/ops.hpp"
#include "transukan/tape.hpp"

namespace tukan {

KanGrid KanGrid::make(std::size_t grid_size, std::size_t order, double range_lo, double range_hi) {
  if (grid_size == 0) throw ConfigError("KanGrid: grid size G must be positive");
  if (!(range_hi > range_lo)) throw ConfigError("KanGrid: range_hi must exceed range_lo");
  return KanGrid{grid_size, order, range_lo, range_hi};
}

double KanGrid::lower(std::size_t i) const {
  return range_lo + (static_cast<double>(i) - static_cast<double>(order)) * step();
}

double KanGrid::upper(std::size_t i) const { return lower(i) + static_cast<double>(order + 1) * step(); }

double relukan_basis_value(double x, double s, double e) {
  const double a = e - x;
  const double b = x - s;
  if (a <= 0.0 || b <= 0.0) return 0.0;
  const double w = e - s;
  const double p = a * b;
  return p * p * 16.0 / (w * w * w * w);
}

std::vector<double> relukan_basis(double x, const KanGrid& grid) {
  std::vector<double> out(grid.n_basis());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = relukan_basis_value(x, grid.lower(i), grid.upper(i));
  return out;
}

std::vector<double> bspline_knots(const KanGrid& grid, int order) {
  if (order < 1) throw ConfigError("bspline: order must be >= 1");
  const std::size_t ext = static_cast<std::size_t>(order - 1);
  const std::size_t m = grid.grid_size + 1 + 2 * ext;
  std::vector<double> t(m);
  const double h = grid.step();
  for (std::size_t j = 0; j < m; ++j) {
    t[j] = grid.range_lo + (static_cast<double>(j) - static_cast<double>(ext)) * h;
  }
  return t;
}

namespace {

// Cox-de Boor on a precomputed knot vector. Fills values (and optionally
// derivatives) for the m - order basis functions of the given order.
void cox_de_boor(double x, const std::vector<double>& t, int order, double* values, double* derivs) {
  const std::size_t m = t.size();
  const std::size_t n = m - static_cast<std::size_t>(order);
  std::vector<double> N(m - 1, 0.0);
  for (std::size_t j = 0; j + 1 < m; ++j) N[j] = (t[j] <= x && x < t[j + 1]) ? 1.0 : 0.0;
  for (int q = 2; q <= order; ++q) {
    if (derivs != nullptr && q == order) {
      // dB_{i,q}/dx = (q-1) [B_{i,q-1}/(t_{i+q-1}-t_i) - B_{i+1,q-1}/(t_{i+q}-t_{i+1})]
      for (std::size_t i = 0; i < n; ++i) {
        const double d1 = t[i + q - 1] - t[i];
        const double d2 = t[i + q] - t[i + 1];
        derivs[i] = (q - 1) * ((d1 > 0 ? N[i] / d1 : 0.0) - (d2 > 0 ? N[i + 1] / d2 : 0.0));
      }
    }
    const std::size_t count = m - static_cast<std::size_t>(q);
    for (std::size_t j = 0; j < count; ++j) {
      const double d1 = t[j + q - 1] - t[j];
      const double d2 = t[j + q] - t[j + 1];
      const double left = d1 > 0 ? (x - t[j]) / d1 * N[j] : 0.0;
      const double right = d2 > 0 ? (t[j + q] - x) / d2 * N[j + 1] : 0.0;
      N[j] = left + right;
    }
  }
  if (derivs != nullptr && order == 1) {
    for (std::size_t i = 0; i < n; ++i) derivs[i] = 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) values[i] = N[i];
}

void require_last_dim(const Tensor& x, std::size_t c_in, const char* op) {
  if (!x.defined() || x.dim(-1) != c_in) {
    throw DimensionError(std::string(op) + ": input " + (x.defined() ? shape_str(x.shape()) : "<undefined>") +
                         " does not end in c_in = " + std::to_string(c_in));
  }
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

}  // namespace

std::vector<double> bspline_basis(double x, const KanGrid& grid, int order, std::vector<double>* derivative) {
  const std::vector<double> t = bspline_knots(grid, order);
  const std::size_t n = t.size() - static_cast<std::size_t>(order);
  std::vector<double> values(n);
  if (derivative != nullptr) derivative->assign(n, 0.0);
  cox_de_boor(x, t, order, values.data(), derivative ? derivative->data() : nullptr);
  return values;
}

double phi_edge(double x, double w_b, double w_s, std::span<const double> coeffs, const KanGrid& grid,
                int spline_degree) {
  const std::vector<double> basis = bspline_basis(x, grid, spline_degree + 1);
  if (coeffs.size() != basis.size()) {
    throw DimensionError("phi_edge: expected " + std::to_string(basis.size()) + " coefficients, got " +
                         std::to_string(coeffs.size()));
  }
  double spline = 0.0;
  for (std::size_t i = 0; i < basis.size(); ++i) spline += coeffs[i] * basis[i];
  const double silu = x / (1.0 + std::exp(-x));
  return w_b * silu + w_s * spline;
}

// ---------------------------------------------------------------------------

Tensor relukan_expand(const Tensor& x, const KanGrid& grid, BasisLayout layout) {
  const std::size_t n = grid.n_basis();
  const std::size_t c = x.dim(-1);
  const std::size_t rows = x.numel() / c;
  Shape out_shape = x.shape();
  if (layout == BasisLayout::kPerChannel) {
    out_shape.push_back(n);
  } else {
    out_shape.back() = n;
    out_shape.push_back(c);
  }
  std::vector<double> lo(n), hi(n), norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = grid.lower(i);
    hi[i] = grid.upper(i);
    const double w = hi[i] - lo[i];
    norm[i] = 16.0 / (w * w * w * w);
  }
  // Index of (row, channel, basis) in the output buffer.
  auto at = [layout, n, c](std::size_t r, std::size_t p, std::size_t i) {
    return layout == BasisLayout::kPerChannel ? (r * c + p) * n + i : (r * n + i) * c + p;
  };
  Tensor out(out_shape);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = 0; p < c; ++p) {
      const double v = xd[r * c + p];
      for (std::size_t i = 0; i < n; ++i) {
        const double a = hi[i] - v, b = v - lo[i];
        const double prod = (a > 0.0 && b > 0.0) ? a * b : 0.0;
        od[at(r, p, i)] = prod * prod * norm[i];
      }
    }
  }
  check_finite(out, "relukan_expand");
  if (should_record({&x})) {
    record_op(out, [x, lo, hi, norm, rows, c, n, at](std::span<const double> g) mutable {
      auto xd = x.data();
      auto xg = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = 0; p < c; ++p) {
          const double v = xd[r * c + p];
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double a = hi[i] - v, b = v - lo[i];
            if (a <= 0.0 || b <= 0.0) continue;
            // d/dx [(ab)^2] = 2ab (a - b) since da/dx = -1, db/dx = 1.
            acc += g[at(r, p, i)] * 2.0 * a * b * (a - b) * norm[i];
          }
          xg[r * c + p] += acc;
        }
      }
    });
  }
  return out;
}

Tensor relukan_pooled(const Tensor& x, const KanGrid& grid) {
  const std::size_t n = grid.n_basis();
  std::vector<double> lo(n), hi(n), norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = grid.lower(i);
    hi[i] = grid.upper(i);
    const double w = hi[i] - lo[i];
    norm[i] = 16.0 / (w * w * w * w) / static_cast<double>(n);
  }
  Tensor out(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t k = 0; k < xd.size(); ++k) {
    const double v = xd[k];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = hi[i] - v, b = v - lo[i];
      const double prod = (a > 0.0 && b > 0.0) ? a * b : 0.0;
      acc += prod * prod * norm[i];
    }
    od[k] = acc;
  }
  check_finite(out, "relukan_pooled");
  if (should_record({&x})) {
    record_op(out, [x, lo, hi, norm, n](std::span<const double> g) mutable {
      auto xd = x.data();
      auto xg = x.grad_buffer();
      for (std::size_t k = 0; k < xd.size(); ++k) {
        const double v = xd[k];
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double a = hi[i] - v, b = v - lo[i];
          if (a <= 0.0 || b <= 0.0) continue;
          acc += 2.0 * a * b * (a - b) * norm[i];
        }
        xg[k] += g[k] * acc;
      }
    });
  }
  return out;
}

Tensor bspline_expand(const Tensor& x, const KanGrid& grid, int order) {
  const std::vector<double> t = bspline_knots(grid, order);
  const std::size_t n = t.size() - static_cast<std::size_t>(order);
  const std::size_t total = x.numel();
  Shape out_shape = x.shape();
  out_shape.push_back(n);
  Tensor out(out_shape);
  const bool record = should_record({&x});
  std::vector<double> derivs(record ? total * n : 0);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t k = 0; k < total; ++k) {
    cox_de_boor(xd[k], t, order, od.data() + k * n, record ? derivs.data() + k * n : nullptr);
  }
  check_finite(out, "bspline_expand");
  if (record) {
    record_op(out, [x, n, derivs = std::move(derivs)](std::span<const double> g) mutable {
      auto xg = x.grad_buffer();
      for (std::size_t k = 0; k < xg.size(); ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[k * n + i] * derivs[k * n + i];
        xg[k] += acc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

BSplineKanLayer BSplineKanLayer::create(std::size_t c_in, std::size_t c_out, const KanGrid& grid, int spline_degree,
                                        Rng& rng) {
  if (c_in == 0 || c_out == 0) throw ConfigError("BSplineKanLayer: dimensions must be positive");
  if (spline_degree < 0) throw ConfigError("BSplineKanLayer: spline degree must be >= 0");
  BSplineKanLayer layer;
  layer.c_in = c_in;
  layer.c_out = c_out;
  layer.grid = grid;
  layer.spline_degree = spline_degree;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
  layer.base_weight = Tensor::uniform({c_out, c_in}, -bound, bound, rng).set_requires_grad();
  layer.spline_weight = Tensor::uniform({c_out, c_in}, -bound, bound, rng).set_requires_grad();
  layer.coeffs = Tensor::normal({c_out, c_in, layer.n_basis()}, 0.0, 0.1, rng).set_requires_grad();
  return layer;
}

ReLUKanLayer ReLUKanLayer::create(std::size_t c_in, std::size_t c_out, const KanGrid& grid, Rng& rng) {
  if (c_in == 0 || c_out == 0) throw ConfigError("ReLUKanLayer: dimensions must be positive");
  ReLUKanLayer layer;
  layer.c_in = c_in;
  layer.c_out = c_out;
  layer.grid = grid;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * grid.n_basis()));
  layer.weight = Tensor::uniform({c_out, grid.n_basis(), c_in}, -bound, bound, rng).set_requires_grad();
  layer.bias = Tensor::zeros({c_out}).set_requires_grad();
  return layer;
}

EfficientKanLayer EfficientKanLayer::create(std::size_t c_in, std::size_t c_out, const KanGrid& grid, Rng& rng,
                                            bool learnable_basis_weights) {
  if (c_in == 0 || c_out == 0) throw ConfigError("EfficientKanLayer: dimensions must be positive");
  EfficientKanLayer layer;
  layer.c_in = c_in;
  layer.c_out = c_out;
  layer.grid = grid;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
  layer.weight = Tensor::uniform({c_out, c_in}, -bound, bound, rng).set_requires_grad();
  layer.bias = Tensor::zeros({c_out}).set_requires_grad();
  if (learnable_basis_weights) layer.basis_weight = Tensor::ones({c_in, grid.n_basis()}).set_requires_grad();
  return layer;
}

std::vector<Tensor> EfficientKanLayer::parameters() const {
  std::vector<Tensor> p{weight, bias};
  if (basis_weight.defined()) p.push_back(basis_weight);
  return p;
}

Tensor bspline_kan_forward(const Tensor& x, const BSplineKanLayer& layer) {
  require_last_dim(x, layer.c_in, "bspline_kan_forward");
  const std::size_t n = layer.n_basis();
  const std::size_t rows = x.numel() / layer.c_in;
  // Residual branch: w_b silu(x) summed over inputs.
  Tensor base = linear(silu(x), layer.base_weight, Tensor());
  // Spline branch: edge weights w_s c folded into one [c_out, c_in * n] map.
  Tensor basis = reshape(bspline_expand(x, layer.grid, layer.spline_degree + 1), {rows, layer.c_in * n});
  Tensor edge = mul(reshape(layer.spline_weight, {layer.c_out, layer.c_in, 1}), layer.coeffs);
  Tensor spline = linear(basis, reshape(edge, {layer.c_out, layer.c_in * n}), Tensor());
  return add(base, reshape(spline, with_last(x.shape(), layer.c_out)));
}

Tensor relukan_forward(const Tensor& x, const ReLUKanLayer& layer) {
  require_last_dim(x, layer.c_in, "relukan_forward");
  const std::size_t n = layer.grid.n_basis();
  const std::size_t rows = x.numel() / layer.c_in;
  // (B, G+K, c_in) activation block, flattened so one kernel covers it whole.
  Tensor block = reshape(relukan_expand(x, layer.grid, BasisLayout::kPerBasis), {rows, n * layer.c_in});
  Tensor kernel = reshape(layer.weight, {layer.c_out, n * layer.c_in});
  return reshape(linear(block, kernel, layer.bias), with_last(x.shape(), layer.c_out));
}

Tensor efficientkan_forward(const Tensor& x, const EfficientKanLayer& layer) {
  require_last_dim(x, layer.c_in, "efficientkan_forward");
  Tensor pooled;
  if (layer.basis_weight.defined()) {
    pooled = mean_last_axis(mul(relukan_expand(x, layer.grid, BasisLayout::kPerChannel), layer.basis_weight));
  } else {
    pooled = relukan_pooled(x, layer.grid);
  }
  return linear(square(pooled), layer.weight, layer.bias);
}

KanParamCount kan_param_count(const BSplineKanLayer& layer) {
  KanParamCount c;
  c.basis = layer.c_out * layer.c_in * layer.n_basis();
  c.integration = 2 * layer.c_out * layer.c_in;
  return c;
}

KanParamCount kan_param_count(const ReLUKanLayer& layer) {
  KanParamCount c;
  c.integration = layer.c_out * layer.grid.n_basis() * layer.c_in;
  c.affine = layer.c_out;
  return c;
}

KanParamCount kan_param_count(const EfficientKanLayer& layer) {
  KanParamCount c;
  c.basis = layer.basis_weight.defined() ? layer.c_in * layer.grid.n_basis() : 0;
  c.affine = layer.c_in * layer.c_out + layer.c_out;
  return c;
}

std::size_t count_elements(const std::vector<Tensor>& params) {
  std::size_t n = 0;
  for (const Tensor& p : params) n += p.numel();
  return n;
}

}  // namespace tukan
