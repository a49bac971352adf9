#pragma once

// Brute-force reference implementations used as test oracles. Plain loops
// over std::vector, no library calls beyond <cmath>.

#include <cmath>
#include <cstddef>
#include <vector>

#include "transukan/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec values(const tukan::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

/// a[m,k] * b[k,n]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
  }
  return out;
}

/// Zero-padded cross-correlation, x[B,C,H,W] w[O,C,k,k] -> [B,O,Ho,Wo].
inline Vec conv2d(const Vec& x, const Vec& w, const Vec& bias, std::size_t B, std::size_t C, std::size_t H,
                  std::size_t W, std::size_t O, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Vec out(B * O * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += x[((b * C + c) * H + iy) * W + ix] * w[((o * C + c) * k + i) * k + j];
              }
          out[((b * O + o) * Ho + y) * Wo + xx] = s;
        }
  return out;
}

inline double relukan_basis(double x, double s, double e) {
  const double a = e - x > 0 ? e - x : 0.0, b = x - s > 0 ? x - s : 0.0;
  const double w = e - s;
  return a * a * b * b * 16.0 / (w * w * w * w);
}

/// Cox-de Boor recursion over an explicit knot vector; `order` 1 is the
/// indicator on [t_i, t_{i+1}).
inline double bspline(const Vec& t, std::size_t i, int order, double x) {
  if (order == 1) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double left = 0.0, right = 0.0;
  const double dl = t[i + order - 1] - t[i], dr = t[i + order] - t[i + 1];
  if (dl > 0) left = (x - t[i]) / dl * bspline(t, i, order - 1, x);
  if (dr > 0) right = (t[i + order] - x) / dr * bspline(t, i + 1, order - 1, x);
  return left + right;
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::fmax(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
