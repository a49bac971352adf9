#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "transukan/error.hpp"
#include "transukan/kan.hpp"
#include "transukan/ops.hpp"
#include "transukan/tape.hpp"

using namespace tukan;

namespace {

oracle::Vec knots(const KanGrid& g, int order) {
  oracle::Vec t;
  const double h = (g.range_hi - g.range_lo) / static_cast<double>(g.grid_size);
  for (int j = 0; j <= static_cast<int>(g.grid_size) + 2 * (order - 1); ++j) {
    t.push_back(g.range_lo + (j - (order - 1)) * h);
  }
  return t;
}

double support_lo(const KanGrid& g, std::size_t i) {
  return g.range_lo + (static_cast<double>(i) - static_cast<double>(g.order)) * g.step();
}
double support_hi(const KanGrid& g, std::size_t i) { return g.range_lo + static_cast<double>(i + 1) * g.step(); }

}  // namespace

TEST(KanGrid, ValidatesAndIndexesSupports) {
  EXPECT_THROW(KanGrid::make(0, 3), ConfigError);
  EXPECT_THROW(KanGrid::make(5, 3, 1.0, 1.0), ConfigError);
  const KanGrid g = KanGrid::make(5, 3);
  EXPECT_EQ(g.n_basis(), 8u);
  EXPECT_DOUBLE_EQ(g.step(), 0.4);
  for (std::size_t i = 0; i < g.n_basis(); ++i) {
    EXPECT_NEAR(g.lower(i), support_lo(g, i), 1e-15);
    EXPECT_NEAR(g.upper(i), support_hi(g, i), 1e-15);
  }
}

TEST(ReluKanBasis, PeakZerosAndRange) {
  // Closed form at the quarter point: 16 (3w/4)^2 (w/4)^2 / w^4 = 9/16.
  EXPECT_NEAR(relukan_basis_value(0.25, 0.0, 1.0), 9.0 / 16.0, 1e-15);
  EXPECT_NEAR(relukan_basis_value(0.5, 0.0, 1.0), 1.0, 1e-15);
  EXPECT_EQ(relukan_basis_value(-0.1, 0.0, 1.0), 0.0);
  EXPECT_EQ(relukan_basis_value(1.0, 0.0, 1.0), 0.0);
  const KanGrid g = KanGrid::make(4, 2, -2.0, 2.0);
  Rng rng(1);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int n = 0; n < 200; ++n) {
    const double x = u(rng);
    const auto v = relukan_basis(x, g);
    ASSERT_EQ(v.size(), 6u);
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(v[i], oracle::relukan_basis(x, support_lo(g, i), support_hi(g, i)), 1e-15);
      EXPECT_GE(v[i], 0.0);
      EXPECT_LE(v[i], 1.0);
    }
  }
}

TEST(BSplineBasis, MatchesRecursionAndPartitionOfUnity) {
  const KanGrid g = KanGrid::make(5, 3);
  for (int order : {1, 2, 3, 4}) {
    const auto t = knots(g, order);
    const auto impl_t = bspline_knots(g, order);
    ASSERT_EQ(impl_t.size(), t.size());
    for (std::size_t j = 0; j < t.size(); ++j) EXPECT_NEAR(impl_t[j], t[j], 1e-14);
    Rng rng(order);
    std::uniform_real_distribution<double> u(-0.999, 0.999);
    for (int n = 0; n < 100; ++n) {
      const double x = u(rng);
      const auto b = bspline_basis(x, g, order);
      ASSERT_EQ(b.size(), g.grid_size + order - 1);
      double total = 0;
      for (std::size_t i = 0; i < b.size(); ++i) {
        EXPECT_NEAR(b[i], oracle::bspline(t, i, order, x), 1e-14);
        total += b[i];
      }
      EXPECT_NEAR(total, 1.0, 1e-13);
    }
  }
}

TEST(BSplineBasis, DerivativeMatchesDifferences) {
  const KanGrid g = KanGrid::make(5, 3);
  std::vector<double> d;
  const double x = 0.137, h = 1e-6;
  bspline_basis(x, g, 4, &d);
  const auto p = bspline_basis(x + h, g, 4), m = bspline_basis(x - h, g, 4);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], (p[i] - m[i]) / (2 * h), 1e-7);
}

TEST(BasisExpansion, LayoutsAndPooling) {
  const KanGrid g = KanGrid::make(3, 2);
  Rng rng(2);
  Tensor x = Tensor::uniform({2, 3}, -1.5, 1.5, rng);
  Tensor pc = relukan_expand(x, g, BasisLayout::kPerChannel);
  Tensor pb = relukan_expand(x, g, BasisLayout::kPerBasis);
  ASSERT_EQ(pc.shape(), (Shape{2, 3, 5}));
  ASSERT_EQ(pb.shape(), (Shape{2, 5, 3}));
  Tensor pooled = relukan_pooled(x, g);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        const double v = oracle::relukan_basis(x[r * 3 + c], support_lo(g, i), support_hi(g, i));
        EXPECT_NEAR(pc[(r * 3 + c) * 5 + i], v, 1e-15);
        EXPECT_EQ(pb[(r * 5 + i) * 3 + c], pc[(r * 3 + c) * 5 + i]);
        mean += v / 5.0;
      }
      EXPECT_NEAR(pooled[r * 3 + c], mean, 1e-15);
    }
  Tensor bs = bspline_expand(x, g, 3);
  EXPECT_EQ(bs.shape(), (Shape{2, 3, 5}));
}

TEST(KanLayers, BSplineMatchesEdgeSum) {
  const KanGrid g = KanGrid::make(4, 3, -1.0, 1.0);
  Rng rng(3);
  const auto layer = BSplineKanLayer::create(3, 2, g, 3, rng);
  Tensor x = Tensor::uniform({4, 3}, -1.2, 1.2, rng);
  Tensor y = bspline_kan_forward(x, layer);
  const auto t = knots(g, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        const double xi = x[r * 3 + i];
        double spline = 0;
        for (std::size_t k = 0; k < layer.n_basis(); ++k) {
          spline += layer.coeffs[(o * 3 + i) * layer.n_basis() + k] * oracle::bspline(t, k, 4, xi);
        }
        s += layer.base_weight[o * 3 + i] * oracle::silu(xi) + layer.spline_weight[o * 3 + i] * spline;
        EXPECT_NEAR(phi_edge(xi, layer.base_weight[o * 3 + i], layer.spline_weight[o * 3 + i],
                             std::span<const double>(layer.coeffs.data().data() + (o * 3 + i) * layer.n_basis(),
                                                     layer.n_basis()),
                             g, 3),
                    layer.base_weight[o * 3 + i] * oracle::silu(xi) + layer.spline_weight[o * 3 + i] * spline, 1e-13);
      }
      EXPECT_NEAR(y[r * 2 + o], s, 1e-13);
    }
}

TEST(KanLayers, ReluKanMatchesTripleSum) {
  const KanGrid g = KanGrid::make(5, 3);
  Rng rng(4);
  const auto layer = ReLUKanLayer::create(3, 4, g, rng);
  Tensor x = Tensor::uniform({2, 3}, -2.5, 2.0, rng);
  Tensor y = relukan_forward(x, layer);
  const std::size_t n = g.n_basis();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 4; ++o) {
      double s = layer.bias[o];
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < 3; ++i) {
          s += layer.weight[(o * n + k) * 3 + i] * oracle::relukan_basis(x[r * 3 + i], support_lo(g, k), support_hi(g, k));
        }
      EXPECT_NEAR(y[r * 4 + o], s, 1e-13);
    }
}

TEST(KanLayers, EfficientKanMatchesStagedPipeline) {
  const KanGrid g = KanGrid::make(5, 3);
  Rng rng(5);
  for (const bool weighted : {false, true}) {
    auto layer = EfficientKanLayer::create(3, 2, g, rng, weighted);
    if (weighted) {
      for (double& v : layer.basis_weight.data()) v = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
    }
    Tensor x = Tensor::uniform({3, 3}, -2.5, 2.0, rng);
    Tensor y = efficientkan_forward(x, layer);
    const std::size_t n = g.n_basis();
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t o = 0; o < 2; ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < 3; ++i) {
          double pooled = 0;
          for (std::size_t k = 0; k < n; ++k) {
            const double a = weighted ? layer.basis_weight[i * n + k] : 1.0;
            pooled += a * oracle::relukan_basis(x[r * 3 + i], support_lo(g, k), support_hi(g, k)) / n;
          }
          s += layer.weight[o * 3 + i] * pooled * pooled;
        }
        EXPECT_NEAR(y[r * 2 + o], s, 1e-13);
      }
  }
}

TEST(KanLayers, ParameterCounts) {
  const KanGrid g = KanGrid::make(5, 3);
  Rng rng(6);
  const auto e = EfficientKanLayer::create(7, 5, g, rng);
  const auto r = ReLUKanLayer::create(7, 5, g, rng);
  const auto b = BSplineKanLayer::create(7, 5, g, 3, rng);
  EXPECT_EQ(kan_param_count(e).total(), 7u * 5 + 5);
  EXPECT_EQ(kan_param_count(r).total(), 8u * 7 * 5 + 5);
  EXPECT_EQ(kan_param_count(b).total(), 5u * 7 * 8 + 2 * 5 * 7);
  EXPECT_EQ(count_elements(e.parameters()), kan_param_count(e).total());
  EXPECT_EQ(count_elements(r.parameters()), kan_param_count(r).total());
  EXPECT_EQ(count_elements(b.parameters()), kan_param_count(b).total());
  const auto ew = EfficientKanLayer::create(7, 5, g, rng, true);
  EXPECT_EQ(count_elements(ew.parameters()), 7u * 5 + 5 + 7 * 8);
}

TEST(KanLayers, RejectWrongWidth) {
  const KanGrid g = KanGrid::make(5, 3);
  Rng rng(7);
  const auto e = EfficientKanLayer::create(3, 2, g, rng);
  EXPECT_THROW(efficientkan_forward(Tensor::zeros({2, 4}), e), DimensionError);
}

TEST(KanLayers, ForwardAcceptsTokenBatches) {
  const KanGrid g = KanGrid::make(5, 3);
  Rng rng(8);
  const auto e = EfficientKanLayer::create(4, 6, g, rng);
  Tensor x = Tensor::uniform({2, 3, 4}, -1, 1, rng);
  EXPECT_EQ(efficientkan_forward(x, e).shape(), (Shape{2, 3, 6}));
}
