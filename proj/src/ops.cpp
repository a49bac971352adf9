#include "transukan/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "transukan/error.hpp"
#include "transukan/tape.hpp"

namespace tukan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  // Per-input element strides over `out`, 0 along broadcast axes.
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::vector<std::size_t> st = contiguous_strides(in);
  std::vector<std::size_t> res(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) res[off + i] = in[i] == 1 ? 0 : st[i];
  return res;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  p.out = broadcast_shape(a, b, op);
  p.stride_a = broadcast_strides(a, p.out);
  p.stride_b = broadcast_strides(b, p.out);
  return p;
}

// Calls fn(i_out, i_a, i_b) for every output element.
template <class Fn>
void for_each_broadcast(const Broadcast& p, Fn&& fn) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor argument");
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd dfdx) {
  require_defined(x, name);
  Tensor out(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(xd[i]);
  check_finite(out, name);
  if (should_record({&x})) {
    record_op(out, [x, dfdx](std::span<const double> g) mutable {
      if (!x.requires_grad()) return;
      auto xd = x.data();
      auto xg = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * dfdx(xd[i]);
    });
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Output columns [lo, hi) whose input column ox * stride + j - pad is inside [0, W).
void valid_columns(std::size_t W, std::size_t j, std::size_t stride, std::size_t pad, std::size_t Wo, std::size_t& lo,
                   std::size_t& hi) {
  lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
  const std::size_t limit = W + pad;  // need ox * stride + j < W + pad
  hi = limit > j ? std::min(Wo, (limit - j - 1) / stride + 1) : 0;
  if (hi < lo) hi = lo;
}

// im2col for one image: x[C,H,W] -> cols[C*kh*kw, Ho*Wo].
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, double* cols) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols + ((c * kh + i) * kw + j) * Ho * Wo;
        std::size_t lo, hi;
        valid_columns(W, j, stride, pad, Wo, lo, hi);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          double* dst = row + oy * Wo;
          if (iy < 0 || iy >= static_cast<long>(H)) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
          std::fill(dst, dst + lo, 0.0);
          if (stride == 1) {
            if (hi > lo) std::copy(src + (lo + j - pad), src + (hi + j - pad), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + j - pad];
          }
          std::fill(dst + hi, dst + Wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, double* dx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const double* row = cols + ((c * kh + i) * kw + j) * Ho * Wo;
        std::size_t lo, hi;
        valid_columns(W, j, stride, pad, Wo, lo, hi);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          double* dst = dx + (c * H + static_cast<std::size_t>(iy)) * W;
          const double* src = row + oy * Wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + j - pad] += src[ox];
        }
      }
    }
  }
}

// Stride-1 convolution without im2col. The input is zero-padded once and
// the output is computed on the padded row width, so every kernel tap (i, j)
// is a single GEMM against a strided view starting at offset i * Wp + j.
// Columns past Wo in each output row are scratch and dropped.
struct Stride1Plan {
  std::size_t B, C, H, W, O, kh, kw, pad, Ho, Wo, Hp, Wp, plane, cols;
};

using StridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMutMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

void pad_image(const Stride1Plan& q, const double* x, double* xpad) {
  std::fill(xpad, xpad + q.C * q.plane, 0.0);
  for (std::size_t c = 0; c < q.C; ++c)
    for (std::size_t y = 0; y < q.H; ++y)
      std::copy(x + (c * q.H + y) * q.W, x + (c * q.H + y + 1) * q.W, xpad + c * q.plane + (y + q.pad) * q.Wp + q.pad);
}

// Per-tap weight matrices [kh*kw][O, C].
Buffer split_taps(const Stride1Plan& q, std::span<const double> w) {
  Buffer taps(q.kh * q.kw * q.O * q.C);
  for (std::size_t o = 0; o < q.O; ++o)
    for (std::size_t c = 0; c < q.C; ++c)
      for (std::size_t t = 0; t < q.kh * q.kw; ++t) taps[(t * q.O + o) * q.C + c] = w[(o * q.C + c) * q.kh * q.kw + t];
  return taps;
}

void conv_stride1_forward(const Stride1Plan& q, const double* x, std::span<const double> w, const double* bias,
                          double* out) {
  const Buffer taps = split_taps(q, w);
  Buffer xpad(q.C * q.plane), ypad(q.O * q.cols);
  for (std::size_t b = 0; b < q.B; ++b) {
    pad_image(q, x + b * q.C * q.H * q.W, xpad.data());
    MapMat Y(ypad.data(), q.O, q.cols);
    Y.setZero();
    for (std::size_t i = 0; i < q.kh; ++i) {
      for (std::size_t j = 0; j < q.kw; ++j) {
        const std::size_t t = i * q.kw + j;
        Y.noalias() += MapConstMat(taps.data() + t * q.O * q.C, q.O, q.C) *
                       StridedMat(xpad.data() + i * q.Wp + j, q.C, q.cols, Eigen::OuterStride<>(q.plane));
      }
    }
    double* ob = out + b * q.O * q.Ho * q.Wo;
    for (std::size_t o = 0; o < q.O; ++o) {
      const double bo = bias ? bias[o] : 0.0;
      for (std::size_t y = 0; y < q.Ho; ++y) {
        const double* src = ypad.data() + o * q.cols + y * q.Wp;
        double* dst = ob + (o * q.Ho + y) * q.Wo;
        for (std::size_t xx = 0; xx < q.Wo; ++xx) dst[xx] = src[xx] + bo;
      }
    }
  }
}

void conv_stride1_backward(const Stride1Plan& q, const double* x, std::span<const double> w, const double* g,
                           double* xg, double* wg, double* bg) {
  const Buffer taps = split_taps(q, w);
  Buffer xpad(wg ? q.C * q.plane : 0), dxpad(xg ? q.C * q.plane : 0), gpad(q.O * q.cols, 0.0);
  Buffer dtaps(wg ? taps.size() : 0, 0.0);
  for (std::size_t b = 0; b < q.B; ++b) {
    const double* gb = g + b * q.O * q.Ho * q.Wo;
    for (std::size_t o = 0; o < q.O; ++o) {
      for (std::size_t y = 0; y < q.Ho; ++y) {
        const double* src = gb + (o * q.Ho + y) * q.Wo;
        std::copy(src, src + q.Wo, gpad.data() + o * q.cols + y * q.Wp);
        if (bg) {
          for (std::size_t xx = 0; xx < q.Wo; ++xx) bg[o] += src[xx];
        }
      }
    }
    MapConstMat G(gpad.data(), q.O, q.cols);
    if (wg) pad_image(q, x + b * q.C * q.H * q.W, xpad.data());
    if (xg) std::fill(dxpad.begin(), dxpad.end(), 0.0);
    for (std::size_t i = 0; i < q.kh; ++i) {
      for (std::size_t j = 0; j < q.kw; ++j) {
        const std::size_t t = i * q.kw + j, off = i * q.Wp + j;
        if (wg) {
          MapMat(dtaps.data() + t * q.O * q.C, q.O, q.C).noalias() +=
              G * StridedMat(xpad.data() + off, q.C, q.cols, Eigen::OuterStride<>(q.plane)).transpose();
        }
        if (xg) {
          StridedMutMat(dxpad.data() + off, q.C, q.cols, Eigen::OuterStride<>(q.plane)).noalias() +=
              MapConstMat(taps.data() + t * q.O * q.C, q.O, q.C).transpose() * G;
        }
      }
    }
    if (xg) {
      double* xb = xg + b * q.C * q.H * q.W;
      for (std::size_t c = 0; c < q.C; ++c) {
        for (std::size_t y = 0; y < q.H; ++y) {
          const double* src = dxpad.data() + c * q.plane + (y + q.pad) * q.Wp + q.pad;
          double* dst = xb + (c * q.H + y) * q.W;
          for (std::size_t xx = 0; xx < q.W; ++xx) dst[xx] += src[xx];
        }
      }
    }
  }
  if (wg) {
    for (std::size_t o = 0; o < q.O; ++o)
      for (std::size_t c = 0; c < q.C; ++c)
        for (std::size_t t = 0; t < q.kh * q.kw; ++t) wg[(o * q.C + c) * q.kh * q.kw + t] += dtaps[(t * q.O + o) * q.C + c];
  }
}


}  // namespace

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

// ---------------------------------------------------------------------------
// Binary elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const Broadcast p = plan_broadcast(a.shape(), b.shape(), "add");
  Tensor out(p.out);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { od[i] = ad[ia] + bd[ib]; });
  check_finite(out, "add");
  if (should_record({&a, &b})) {
    record_op(out, [a, b, p](std::span<const double> g) mutable {
      if (a.requires_grad()) {
        auto ag = a.grad_buffer();
        for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t) { ag[ia] += g[i]; });
      }
      if (b.requires_grad()) {
        auto bg = b.grad_buffer();
        for_each_broadcast(p, [&](std::size_t i, std::size_t, std::size_t ib) { bg[ib] += g[i]; });
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  const Broadcast p = plan_broadcast(a.shape(), b.shape(), "sub");
  Tensor out(p.out);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { od[i] = ad[ia] - bd[ib]; });
  check_finite(out, "sub");
  if (should_record({&a, &b})) {
    record_op(out, [a, b, p](std::span<const double> g) mutable {
      if (a.requires_grad()) {
        auto ag = a.grad_buffer();
        for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t) { ag[ia] += g[i]; });
      }
      if (b.requires_grad()) {
        auto bg = b.grad_buffer();
        for_each_broadcast(p, [&](std::size_t i, std::size_t, std::size_t ib) { bg[ib] -= g[i]; });
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  const Broadcast p = plan_broadcast(a.shape(), b.shape(), "mul");
  Tensor out(p.out);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { od[i] = ad[ia] * bd[ib]; });
  check_finite(out, "mul");
  if (should_record({&a, &b})) {
    record_op(out, [a, b, p](std::span<const double> g) mutable {
      auto ad = a.data();
      auto bd = b.data();
      if (a.requires_grad()) {
        auto ag = a.grad_buffer();
        for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { ag[ia] += g[i] * bd[ib]; });
      }
      if (b.requires_grad()) {
        auto bg = b.grad_buffer();
        for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { bg[ib] += g[i] * ad[ia]; });
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unary elementwise

Tensor scale(const Tensor& x, double s) {
  return unary_op(
      x, "scale", [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(
      x, "add_scalar", [s](double v) { return v + s; }, [](double) { return 1.0; });
}

namespace {
thread_local KinkLog* g_kink_log = nullptr;
}  // namespace

KinkLogScope::KinkLogScope(KinkLog& log) : previous_(g_kink_log) { g_kink_log = &log; }
KinkLogScope::~KinkLogScope() { g_kink_log = previous_; }

Tensor relu(const Tensor& x) {
  if (g_kink_log) {
    for (double v : x.data()) g_kink_log->positive.push_back(v > 0.0);
  }
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary_op(
      x, "silu", [](double v) { return v * sigmoid(v); },
      [](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor elementwise(Elementwise op, std::span<const Tensor> inputs, double factor) {
  const std::size_t arity = (op == Elementwise::kAdd || op == Elementwise::kMul) ? 2 : 1;
  if (inputs.size() != arity) {
    throw ContractError("elementwise: expected " + std::to_string(arity) + " inputs, got " +
                        std::to_string(inputs.size()));
  }
  switch (op) {
    case Elementwise::kRelu: return relu(inputs[0]);
    case Elementwise::kSilu: return silu(inputs[0]);
    case Elementwise::kSquare: return square(inputs[0]);
    case Elementwise::kAdd: return add(inputs[0], inputs[1]);
    case Elementwise::kMul: return mul(inputs[0], inputs[1]);
    case Elementwise::kScale: return scale(inputs[0], factor);
  }
  throw ContractError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch_out;
  Broadcast bp;
  if (batch_a.empty() && batch_b.empty()) {
    batch_out = {1};
    bp.out = {1};
    bp.same = true;
  } else {
    const Shape pa = batch_a.empty() ? Shape{1} : batch_a;
    const Shape pb = batch_b.empty() ? Shape{1} : batch_b;
    try {
      bp = plan_broadcast(pa, pb, "matmul");
    } catch (const DimensionError&) {
      throw DimensionError("matmul: batch dimensions of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                           " do not broadcast");
    }
    batch_out = bp.out;
  }
  Shape out_shape = (batch_a.empty() && batch_b.empty()) ? Shape{} : batch_out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for_each_broadcast(bp, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    MapMat(od + i * m * n, m, n).noalias() =
        MapConstMat(ad + ia * m * k, m, k) * MapConstMat(bd + ib * k * n, k, n);
  });
  check_finite(out, "matmul");
  if (should_record({&a, &b})) {
    record_op(out, [a, b, bp, m, k, n](std::span<const double> g) mutable {
      const double* ad = a.data().data();
      const double* bd = b.data().data();
      double* ag = a.requires_grad() ? a.grad_buffer().data() : nullptr;
      double* bg = b.requires_grad() ? b.grad_buffer().data() : nullptr;
      for_each_broadcast(bp, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        MapConstMat G(g.data() + i * m * n, m, n);
        if (ag) MapMat(ag + ia * m * k, m, k).noalias() += G * MapConstMat(bd + ib * k * n, k, n).transpose();
        if (bg) MapMat(bg + ib * k * n, k, n).noalias() += MapConstMat(ad + ia * m * k, m, k).transpose() * G;
      });
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (x.rank() < 2) throw DimensionError("transpose: rank must be >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t k = weight.dim(1), n = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  MapMat Y(out.data().data(), rows, n);
  Y.noalias() = MapConstMat(x.data().data(), rows, k) * MapConstMat(weight.data().data(), n, k).transpose();
  if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), n);
  check_finite(out, "linear");
  if (should_record({&x, &weight, &bias})) {
    record_op(out, [x, weight, bias, rows, k, n](std::span<const double> g) mutable {
      MapConstMat G(g.data(), rows, n);
      if (x.requires_grad()) {
        MapMat(x.grad_buffer().data(), rows, k).noalias() += G * MapConstMat(weight.data().data(), n, k);
      }
      if (weight.requires_grad()) {
        MapMat(weight.grad_buffer().data(), n, k).noalias() += G.transpose() * MapConstMat(x.data().data(), rows, k);
      }
      if (bias.defined() && bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd>(bias.grad_buffer().data(), n) += G.colwise().sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const Shape& s = x.shape();
  const std::size_t len = s[ax];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Tensor out(s);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        od[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) od[base + j * inner] /= z;
    }
  }
  check_finite(out, "softmax");
  if (should_record({&x})) {
    Tensor y = out;
    record_op(out, [x, y, outer, inner, len](std::span<const double> g) mutable {
      auto yd = y.data();
      auto xg = x.grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * yd[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            xg[idx] += yd[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gamma, "layer_norm");
  require_defined(beta, "layer_norm");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()) +
                         " and beta " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  // Normalized values and inverse std are kept for the adjoint.
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      od[r * d + j] = h * gd[j] + bd[j];
    }
  }
  check_finite(out, "layer_norm");
  if (should_record({&x, &gamma, &beta})) {
    record_op(out, [x, gamma, beta, rows, d, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)](std::span<const double> g) mutable {
      auto gd = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        double* gg = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
        double* bg = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += g[r * d + j] * xhat[r * d + j];
            if (bg) bg[j] += g[r * d + j];
          }
        }
      }
      if (!x.requires_grad()) return;
      auto xg = x.grad_buffer();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g[r * d + j] * gd[j];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * d + j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g[r * d + j] * gd[j];
          xg[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution and resampling

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_defined(x, "conv2d");
  require_defined(weight, "conv2d");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " (padding " + std::to_string(padding) + ")");
  }
  if (bias.defined() && bias.numel() != O) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(O) +
                         " output channels");
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  const std::size_t P = Ho * Wo, K = C * kh * kw;
  Tensor out({B, O, Ho, Wo});
  if (stride == 1) {
    const std::size_t Hp = H + 2 * padding, Wp = W + 2 * padding;
    const Stride1Plan q{B, C, H, W, O, kh, kw, padding, Ho, Wo, Hp, Wp, Hp * Wp + kw, Ho * Wp};
    conv_stride1_forward(q, x.data().data(), weight.data(), bias.defined() ? bias.data().data() : nullptr,
                         out.data().data());
    check_finite(out, "conv2d");
    if (should_record({&x, &weight, &bias})) {
      record_op(out, [x, weight, bias, q](std::span<const double> g) mutable {
        double* wg = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
        double* xg = x.requires_grad() ? x.grad_buffer().data() : nullptr;
        double* bg = bias.defined() && bias.requires_grad() ? bias.grad_buffer().data() : nullptr;
        conv_stride1_backward(q, x.data().data(), weight.data(), g.data(), xg, wg, bg);
      });
    }
    return out;
  }
  Buffer cols(K * P);
  MapConstMat Wm(weight.data().data(), O, K);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.data().data() + b * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
    MapMat Y(out.data().data() + b * O * P, O, P);
    Y.noalias() = Wm * MapConstMat(cols.data(), K, P);
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), O);
  }
  check_finite(out, "conv2d");
  if (should_record({&x, &weight, &bias})) {
    record_op(out, [x, weight, bias, B, C, H, W, O, kh, kw, stride, padding, Ho, Wo](std::span<const double> g) mutable {
      const std::size_t P = Ho * Wo, K = C * kh * kw;
      Buffer cols(K * P);
      MapConstMat Wm(weight.data().data(), O, K);
      double* wg = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
      double* xg = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      double* bg = bias.defined() && bias.requires_grad() ? bias.grad_buffer().data() : nullptr;
      for (std::size_t b = 0; b < B; ++b) {
        MapConstMat G(g.data() + b * O * P, O, P);
        if (bg) Eigen::Map<Eigen::VectorXd>(bg, O) += G.rowwise().sum();
        if (wg) {
          im2col(x.data().data() + b * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
          MapMat(wg, O, K).noalias() += G * MapConstMat(cols.data(), K, P).transpose();
        }
        if (xg) {
          MapMat(cols.data(), K, P).noalias() = Wm.transpose() * G;
          col2im_add(cols.data(), C, H, W, kh, kw, stride, padding, Ho, Wo, xg + b * C * H * W);
        }
      }
    });
  }
  return out;
}

Tensor mean_last_axis(const Tensor& x) {
  require_defined(x, "mean_last_axis");
  const std::size_t k = x.dim(-1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  auto xd = x.data();
  auto od = out.data();
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t r = 0; r < od.size(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += xd[r * k + j];
    od[r] = s * inv_k;
  }
  check_finite(out, "mean_last_axis");
  if (should_record({&x})) {
    record_op(out, [x, k, inv_k](std::span<const double> g) mutable {
      auto xg = x.grad_buffer();
      for (std::size_t r = 0; r < g.size(); ++r) {
        const double v = g[r] * inv_k;
        for (std::size_t j = 0; j < k; ++j) xg[r * k + j] += v;
      }
    });
  }
  return out;
}

Tensor upsample_nearest_2x(const Tensor& x) {
  require_defined(x, "upsample_nearest_2x");
  if (x.rank() != 4) throw DimensionError("upsample_nearest_2x: expected [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 2 * H, 2 * W});
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xd.data() + p * H * W;
    double* dst = od.data() + p * 4 * H * W;
    for (std::size_t y = 0; y < 2 * H; ++y) {
      for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  }
  if (should_record({&x})) {
    record_op(out, [x, planes, H, W](std::span<const double> g) mutable {
      auto xg = x.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p) {
        const double* src = g.data() + p * 4 * H * W;
        double* dst = xg.data() + p * H * W;
        for (std::size_t y = 0; y < 2 * H; ++y) {
          for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[(y / 2) * W + xx / 2] += src[y * 2 * W + xx];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    record_op(out, [x](std::span<const double> g) mutable {
      auto xg = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: expected " + std::to_string(r) + " axes");
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis permutation");
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  const std::vector<std::size_t> in_strides = contiguous_strides(in_shape);
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // Output element i reads input element map[i].
  std::vector<std::size_t> map(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
      map[i] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out(out_shape);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < map.size(); ++i) od[i] = xd[map[i]];
  if (should_record({&x})) {
    record_op(out, [x, map = std::move(map)](std::span<const double> g) mutable {
      auto xg = x.grad_buffer();
      for (std::size_t i = 0; i < map.size(); ++i) xg[map[i]] += g[i];
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> inputs, int axis) {
  if (inputs.empty()) throw ContractError("concat: no inputs");
  for (const Tensor& t : inputs) require_defined(t, "concat");
  const Shape& first = inputs[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Tensor& t : inputs) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_chunk = out_shape[ax] * inner;
  Tensor out(out_shape);
  auto od = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& t : inputs) {
    offsets.push_back(offset);
    const std::size_t chunk = t.dim(static_cast<int>(ax)) * inner;
    auto td = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(td.begin() + o * chunk, td.begin() + (o + 1) * chunk, od.begin() + o * out_chunk + offset);
    }
    offset += chunk;
  }
  if (should_record(inputs)) {
    std::vector<Tensor> ins(inputs.begin(), inputs.end());
    record_op(out, [ins, offsets, outer, inner, out_chunk, ax](std::span<const double> g) mutable {
      for (std::size_t n = 0; n < ins.size(); ++n) {
        if (!ins[n].requires_grad()) continue;
        const std::size_t chunk = ins[n].dim(static_cast<int>(ax)) * inner;
        auto tg = ins[n].grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < chunk; ++j) tg[o * chunk + j] += g[o * out_chunk + offsets[n] + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (should_record({&x})) {
    record_op(out, [x](std::span<const double> g) mutable {
      for (double& v : x.grad_buffer()) v += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace tukan
