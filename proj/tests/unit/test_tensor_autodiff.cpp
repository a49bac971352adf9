#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "transukan/error.hpp"
#include "transukan/gradcheck.hpp"
#include "transukan/ops.hpp"
#include "transukan/tape.hpp"

using namespace tukan;

namespace {

Tensor rnd(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(std::move(s), lo, hi, rng); }

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::zeros({3}).item(), ContractError);
  EXPECT_THROW(Tensor::zeros({3}).dim(2), DimensionError);
}

TEST(Tensor, CopiesAliasAndCloneDetaches) {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = a;
  b[1] = 5.0;
  EXPECT_EQ(a[1], 5.0);
  Tensor c = a.clone();
  c[1] = 7.0;
  EXPECT_EQ(a[1], 5.0);
  EXPECT_FALSE(c.same_storage(a));
  EXPECT_EQ(a.dim(-1), 2u);
}

TEST(Tape, BackwardContracts) {
  Tensor x = Tensor::scalar(2.0).set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = square(x);
    EXPECT_THROW(tape.backward(Tensor::zeros({2})), ContractError);
    tape.backward(y);
    EXPECT_THROW(tape.backward(y), StateError);
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
  Tape empty;
  EXPECT_THROW(empty.backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Tape, InferenceRecordsNothing) {
  Tensor x = Tensor::scalar(3.0).set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    NoGradScope off;
    Tensor y = square(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(Tape::active(), nullptr);
}

TEST(Tape, GradientsAccumulateOverReuse) {
  // y = x*x + 3x at x = 2: dy/dx = 2x + 3 = 7.
  Tensor x = Tensor::scalar(2.0).set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  Tensor y = add(mul(x, x), scale(x, 3.0));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Ops, BroadcastMatchesLoops) {
  Rng rng(1);
  Tensor a = rnd({2, 3, 4}, rng), b = rnd({3, 1}, rng);
  Tensor s = add(a, b), p = mul(a, b), d = sub(a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t n = (i * 3 + j) * 4 + k;
        EXPECT_EQ(s[n], a[n] + b[j]);
        EXPECT_EQ(p[n], a[n] * b[j]);
        EXPECT_EQ(d[n], a[n] - b[j]);
      }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
}

TEST(Ops, MatmulMatchesLoops) {
  Rng rng(2);
  Tensor a = rnd({2, 3, 5}, rng), b = rnd({5, 4}, rng);
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
  const auto av = oracle::values(a), bv = oracle::values(b);
  for (std::size_t batch = 0; batch < 2; ++batch) {
    oracle::Vec slice(av.begin() + batch * 15, av.begin() + (batch + 1) * 15);
    const auto ref = oracle::matmul(slice, bv, 3, 5, 4);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(c[batch * 12 + i], ref[i], 1e-14);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
}

TEST(Ops, LinearAndTranspose) {
  Rng rng(3);
  Tensor x = rnd({4, 3}, rng), w = rnd({2, 3}, rng), b = rnd({2}, rng);
  Tensor y = linear(x, w, b);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < 3; ++i) s += x[r * 3 + i] * w[o * 3 + i];
      EXPECT_NEAR(y[r * 2 + o], s, 1e-14);
    }
  Tensor t = transpose(x);
  ASSERT_EQ(t.shape(), (Shape{3, 4}));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(t[c * 4 + r], x[r * 3 + c]);
}

TEST(Ops, SoftmaxRowsAndStability) {
  Tensor x(Shape{2, 3}, std::vector<double>{1000.0, 1001.0, 1002.0, -1.0, 0.0, 1.0});
  Tensor y = softmax(x, -1);
  const double e0 = std::exp(-2.0), e1 = std::exp(-1.0);
  const double z = e0 + e1 + 1.0;
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(y[r * 3 + 0], e0 / z, 1e-15);
    EXPECT_NEAR(y[r * 3 + 1], e1 / z, 1e-15);
    EXPECT_NEAR(y[r * 3 + 2], 1.0 / z, 1e-15);
  }
  Tensor c = softmax(x, 0);
  EXPECT_NEAR(c[0] + c[3], 1.0, 1e-15);
}

TEST(Ops, LayerNormMatchesFormula) {
  Rng rng(4);
  Tensor x = rnd({3, 5}, rng, -2, 2), g = rnd({5}, rng), b = rnd({5}, rng);
  Tensor y = layer_norm(x, g, b, 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 5; ++j) mu += x[r * 5 + j] / 5.0;
    for (std::size_t j = 0; j < 5; ++j) var += (x[r * 5 + j] - mu) * (x[r * 5 + j] - mu) / 5.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(y[r * 5 + j], (x[r * 5 + j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j], 1e-13);
    }
  }
}

struct ConvCase {
  std::size_t B, C, H, W, O, k, stride, pad;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesDirectLoops) {
  const ConvCase c = GetParam();
  Rng rng(5);
  Tensor x = rnd({c.B, c.C, c.H, c.W}, rng), w = rnd({c.O, c.C, c.k, c.k}, rng), b = rnd({c.O}, rng);
  Tensor y = conv2d(x, w, b, c.stride, c.pad);
  const auto ref = oracle::conv2d(oracle::values(x), oracle::values(w), oracle::values(b), c.B, c.C, c.H, c.W, c.O,
                                  c.k, c.stride, c.pad);
  EXPECT_LT(oracle::max_abs_diff(oracle::values(y), ref), 1e-13);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{2, 3, 8, 8, 4, 3, 1, 1}, ConvCase{1, 2, 7, 5, 3, 3, 2, 1},
                                           ConvCase{2, 4, 6, 6, 2, 1, 1, 0}, ConvCase{1, 1, 5, 9, 2, 2, 1, 0},
                                           ConvCase{1, 2, 4, 4, 3, 3, 1, 2}, ConvCase{1, 3, 9, 9, 2, 3, 3, 0}));

TEST(Ops, ConvRejectsBadShapes) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3}), Tensor(), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 1, 0), DimensionError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 0, 0), ContractError);
}

TEST(Ops, ShapeOps) {
  Rng rng(6);
  Tensor x = rnd({2, 3, 4}, rng);
  Tensor p = permute(x, {2, 0, 1});
  ASSERT_EQ(p.shape(), (Shape{4, 2, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p[(k * 2 + i) * 3 + j], x[(i * 3 + j) * 4 + k]);
  EXPECT_THROW(reshape(x, {5, 5}), DimensionError);
  EXPECT_THROW(permute(x, {0, 0, 1}), DimensionError);

  Tensor a = rnd({2, 1, 3}, rng), b = rnd({2, 2, 3}, rng);
  const Tensor parts[] = {a, b};
  Tensor c = concat(parts, 1);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 3}));
  EXPECT_EQ(c[0], a[0]);
  EXPECT_EQ(c[3], b[0]);
  EXPECT_EQ(c[9], a[3]);

  Tensor img = rnd({1, 1, 2, 2}, rng);
  Tensor up = upsample_nearest_2x(img);
  EXPECT_EQ(up[0], img[0]);
  EXPECT_EQ(up[5], img[0]);
  EXPECT_EQ(up[15], img[3]);

  Tensor m = mean_last_axis(Tensor(Shape{2, 2}, std::vector<double>{1, 3, 5, 9}));
  EXPECT_EQ(m[0], 2.0);
  EXPECT_EQ(m[1], 7.0);
  EXPECT_EQ(sum(m).item(), 9.0);
  EXPECT_EQ(mean(m).item(), 4.5);
}

TEST(Ops, NonFiniteOutputRaises) {
  Tensor x = Tensor::scalar(std::numeric_limits<double>::infinity());
  EXPECT_THROW(scale(x, 2.0), NumericError);
  EXPECT_THROW(silu(Tensor::scalar(std::nan(""))), NumericError);
}

TEST(Ops, ElementwiseDispatch) {
  Tensor x(Shape{3}, std::vector<double>{-1.0, 0.5, 2.0});
  const Tensor one[] = {x};
  const Tensor two[] = {x, x};
  EXPECT_TRUE(elementwise(Elementwise::kRelu, one).equal(relu(x)));
  EXPECT_TRUE(elementwise(Elementwise::kScale, one, 3.0).equal(scale(x, 3.0)));
  EXPECT_TRUE(elementwise(Elementwise::kMul, two).equal(mul(x, x)));
  EXPECT_THROW(elementwise(Elementwise::kAdd, one), ContractError);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-12 / 1e-8);
}

TEST(GradCheck, AnalyticGradientOfKnownFunction) {
  // f(x) = sum(silu(x)) has f'(x) = s(x)(1 + x(1 - s(x))).
  Rng rng(7);
  Tensor x = rnd({6}, rng).set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(silu(x)));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    EXPECT_NEAR(x.grad()[i], s * (1.0 + x[i] * (1.0 - s)), 1e-15);
  }
}

TEST(GradCheck, DetectsWrongAdjoint) {
  // A hand-built op whose backward is off by 2%.
  auto bad = [](const Tensor& x) {
    Tensor out = x.clone();
    if (should_record({&x})) {
      record_op(out, [x](std::span<const double> g) mutable {
        auto xg = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += 1.02 * g[i];
      });
    }
    return sum(out);
  };
  Rng rng(8);
  const auto rep = grad_check(bad, rnd({4}, rng), 1e-5, 1e-4);
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.max_rel_err, 0.02 / 1.02, 1e-6);
}

TEST(GradCheck, SkipsCoordinatesStraddlingAKink) {
  // relu input sits 1e-7 from zero, inside the +-h window.
  Tensor x(Shape{2}, std::vector<double>{1e-7, 0.5});
  GradTarget t{"x", x};
  GradCheckOptions o;
  const auto rep = grad_check([&] { return sum(relu(x)); }, std::span<GradTarget>(&t, 1), o);
  EXPECT_EQ(rep.items[0].kinks_skipped, 1u);
  EXPECT_EQ(rep.items[0].checked, 1u);
  EXPECT_TRUE(rep.pass);
}

TEST(GradCheck, SampledCoordinatesAreDeterministic) {
  Rng rng(9);
  Tensor x = rnd({50}, rng);
  GradTarget t{"x", x};
  GradCheckOptions o;
  o.max_coords = 5;
  o.seed = 3;
  const auto a = grad_check([&] { return sum(square(x)); }, std::span<GradTarget>(&t, 1), o);
  const auto b = grad_check([&] { return sum(square(x)); }, std::span<GradTarget>(&t, 1), o);
  EXPECT_EQ(a.items[0].checked, 5u);
  EXPECT_EQ(a.items[0].worst_index, b.items[0].worst_index);
  EXPECT_FALSE(x.requires_grad());
}
