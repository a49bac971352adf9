#include "transukan/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "transukan/error.hpp"
#include "transukan/kan.hpp"
#include "transukan/kansformer.hpp"
#include "transukan/losses.hpp"
#include "transukan/model.hpp"
#include "transukan/ops.hpp"
#include "transukan/tape.hpp"

namespace tukan {

namespace {

struct SuiteItem {
  const char* scope;
  std::string name;
  double tolerance;
  // Builds inputs from the seed and runs one gradient check.
  std::function<GradCheckReport(std::uint64_t seed, const GradCheckOptions&)> run;
};

Tensor rand(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(s, lo, hi, rng); }

// Values with |v| >= margin so ReLU-type kinks sit far outside the step.
Tensor rand_off_zero(const Shape& s, Rng& rng, double margin = 0.05) {
  Tensor t = rand(s, rng);
  for (double& v : t.data()) v = std::copysign(margin + std::abs(v), v);
  return t;
}

// Inputs spanning a little beyond the grid, kept 5% of a step away from
// every knot so no basis tail is below finite-difference resolution.
Tensor kan_input(const Shape& s, const KanGrid& g, Rng& rng) {
  const double h = g.step(), margin = 0.05 * h;
  Tensor t = rand(s, rng, g.range_lo - 0.5, g.range_hi + 0.5);
  for (double& v : t.data()) {
    const double m = (v - g.range_lo) / h;
    const double gap = (m - std::round(m)) * h;
    if (std::abs(gap) < margin) v += (gap >= 0.0 ? margin : -margin) - gap;
  }
  return t;
}

// Redraws every parameter as +-U(0.2, 1). Default inits leave some
// gradients near 1e-11, below what central differences can resolve.
void condition(const std::vector<Tensor>& params, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (Tensor p : params) {
    for (double& v : p.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  }
}

// Projection weights with |r| in [0.2, 1].
Tensor direction(const Shape& s, Rng& rng) { return rand_off_zero(s, rng, 0.2); }

// mean(out * r) with r fixed, so every output coordinate contributes.
Tensor project(const Tensor& out, const Tensor& r) { return mean(mul(out, r)); }

GradCheckReport check(const std::function<Tensor()>& loss, std::vector<GradTarget> targets,
                      const GradCheckOptions& opt) {
  return grad_check(loss, targets, opt);
}

// One-input op: f(x) projected on a random direction.
SuiteItem unary(std::string name, Shape shape, std::function<Tensor(const Tensor&)> f, bool off_zero = false) {
  return {"ops", std::move(name), kOpTolerance, [shape, f, off_zero](std::uint64_t seed, const GradCheckOptions& o) {
            Rng rng(seed);
            Tensor x = off_zero ? rand_off_zero(shape, rng) : rand(shape, rng);
            const Tensor r = rand(f(x).shape(), rng);
            return check([&] { return project(f(x), r); }, {{"x", x}}, o);
          }};
}

SuiteItem binary(std::string name, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> f) {
  return {"ops", std::move(name), kOpTolerance, [sa, sb, f](std::uint64_t seed, const GradCheckOptions& o) {
            Rng rng(seed);
            Tensor a = rand(sa, rng), b = rand(sb, rng);
            const Tensor r = rand(f(a, b).shape(), rng);
            return check([&] { return project(f(a, b), r); }, {{"a", a}, {"b", b}}, o);
          }};
}

std::vector<GradTarget> named(const std::string& prefix, const std::vector<Tensor>& params) {
  std::vector<GradTarget> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({prefix + "[" + std::to_string(i) + "]", params[i]});
  return out;
}

void add_op_items(std::vector<SuiteItem>& items, bool inject_fault) {
  items.push_back(binary("add", {3, 4}, {4}, [](const Tensor& a, const Tensor& b) { return add(a, b); }));
  items.push_back(binary("sub", {2, 3, 4}, {3, 1}, [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  items.push_back(binary("mul", {2, 1, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  items.push_back(unary("scale", {3, 5}, [](const Tensor& x) { return scale(x, -1.7); }));
  items.push_back(unary("add_scalar", {3, 5}, [](const Tensor& x) { return add_scalar(x, 0.3); }));
  items.push_back(unary("relu", {4, 5}, [](const Tensor& x) { return relu(x); }, true));
  items.push_back(unary("silu", {4, 5}, [](const Tensor& x) { return silu(x); }));
  items.push_back(unary("square", {4, 5}, [](const Tensor& x) { return square(x); }));
  items.push_back(binary("matmul", {3, 4}, {4, 2}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); }));
  items.push_back(
      binary("matmul_batched", {2, 3, 4}, {4, 5}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); }));
  items.push_back(unary("transpose", {2, 3, 4}, [](const Tensor& x) { return transpose(x); }));
  items.push_back({"ops", "linear", kOpTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor x = rand({2, 3, 4}, rng), w = rand({5, 4}, rng), b = rand({5}, rng);
                     const Tensor r = rand({2, 3, 5}, rng);
                     return check([&] { return project(linear(x, w, b), r); }, {{"x", x}, {"weight", w}, {"bias", b}},
                                  o);
                   }});
  items.push_back(unary("softmax_last", {3, 5}, [](const Tensor& x) { return softmax(x, -1); }));
  items.push_back(unary("softmax_axis1", {2, 3, 4}, [](const Tensor& x) { return softmax(x, 1); }));
  items.push_back({"ops", "layer_norm", kOpTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor x = rand({3, 6}, rng, -2.0, 2.0), g = rand({6}, rng, 0.5, 1.5), b = rand({6}, rng);
                     const Tensor r = rand({3, 6}, rng);
                     return check([&] { return project(layer_norm(x, g, b), r); }, {{"x", x}, {"gamma", g}, {"beta", b}},
                                  o);
                   }});
  struct ConvCase {
    const char* name;
    std::size_t kernel, stride, padding;
  };
  for (const ConvCase c : {ConvCase{"conv2d_3x3", 3, 1, 1}, ConvCase{"conv2d_3x3_stride2", 3, 2, 1},
                           ConvCase{"conv2d_1x1", 1, 1, 0}, ConvCase{"conv2d_2x2_valid", 2, 1, 0}}) {
    items.push_back({"ops", c.name, kOpTolerance, [c](std::uint64_t seed, const GradCheckOptions& o) {
                       Rng rng(seed);
                       Tensor x = rand({2, 2, 5, 6}, rng), w = rand({3, 2, c.kernel, c.kernel}, rng),
                              b = rand({3}, rng);
                       const Tensor r = rand(conv2d(x, w, b, c.stride, c.padding).shape(), rng);
                       return check([&] { return project(conv2d(x, w, b, c.stride, c.padding), r); },
                                    {{"x", x}, {"weight", w}, {"bias", b}}, o);
                     }});
  }
  items.push_back(unary("mean_last_axis", {3, 4}, [](const Tensor& x) { return mean_last_axis(x); }));
  items.push_back(unary("upsample_nearest_2x", {1, 2, 3, 3}, [](const Tensor& x) { return upsample_nearest_2x(x); }));
  items.push_back(unary("reshape", {2, 6}, [](const Tensor& x) { return reshape(x, {3, 4}); }));
  items.push_back(unary("permute", {2, 3, 4}, [](const Tensor& x) { return permute(x, {2, 0, 1}); }));
  items.push_back(binary("concat", {2, 2, 3}, {2, 1, 3}, [](const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return concat(parts, 1);
  }));
  items.push_back(unary("sum", {3, 4}, [](const Tensor& x) { return scale(sum(x), 0.7); }));
  items.push_back(unary("mean", {3, 4}, [](const Tensor& x) { return scale(mean(x), 0.7); }));
  const KanGrid grid = KanGrid::make(5, 3);
  for (const auto layout : {BasisLayout::kPerChannel, BasisLayout::kPerBasis}) {
    const std::string name = layout == BasisLayout::kPerChannel ? "relukan_expand" : "relukan_expand_per_basis";
    items.push_back({"ops", name, kOpTolerance, [grid, layout](std::uint64_t seed, const GradCheckOptions& o) {
                       Rng rng(seed);
                       Tensor x = kan_input({3, 4}, grid, rng);
                       const Tensor r = rand(relukan_expand(x, grid, layout).shape(), rng);
                       return check([&] { return project(relukan_expand(x, grid, layout), r); }, {{"x", x}}, o);
                     }});
  }
  items.push_back({"ops", "relukan_pooled", kOpTolerance, [grid](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor x = kan_input({3, 4}, grid, rng);
                     const Tensor r = rand({3, 4}, rng);
                     return check([&] { return project(relukan_pooled(x, grid), r); }, {{"x", x}}, o);
                   }});
  items.push_back({"ops", "bspline_expand", kOpTolerance, [grid](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor x = kan_input({3, 4}, grid, rng);
                     const Tensor r = rand(bspline_expand(x, grid, 4).shape(), rng);
                     return check([&] { return project(bspline_expand(x, grid, 4), r); }, {{"x", x}}, o);
                   }});
  items.push_back({"ops", "cross_entropy", kOpTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor z = rand({2, 3, 2, 2}, rng, -2.0, 2.0);
                     std::vector<Label> y(8);
                     for (Label& v : y) v = std::uniform_int_distribution<Label>(0, 2)(rng);
                     const std::vector<double> w = {0.5, 1.0, 2.0};
                     return check([&] { return cross_entropy(z, y, w); }, {{"logits", z}}, o);
                   }});
  items.push_back({"ops", "dice_loss", kOpTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor p = rand({2, 2, 3, 3}, rng, 0.05, 1.0);
                     std::vector<Label> y(18);
                     for (Label& v : y) v = std::uniform_int_distribution<Label>(0, 1)(rng);
                     return check([&] { return dice_loss(p, y); }, {{"probs", p}}, o);
                   }});
  items.push_back({"ops", "combined_loss", kOpTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     Tensor z = rand({2, 2, 3, 3}, rng, -2.0, 2.0);
                     std::vector<Label> y(18);
                     for (Label& v : y) v = std::uniform_int_distribution<Label>(0, 1)(rng);
                     return check([&] { return combined_loss(z, y, {0.5, 0.5}); }, {{"logits", z}}, o);
                   }});
  if (inject_fault) {
    items.push_back(unary("faulty_scale", {3, 4}, [](const Tensor& x) { return faulty_scale(x, 2.0); }));
  }
}

void add_layer_items(std::vector<SuiteItem>& items) {
  const KanGrid grid = KanGrid::make(5, 3);
  items.push_back({"layers", "affine", kCompositeTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     const Affine a = Affine::create(4, 3, rng);
                     condition(a.parameters(), rng);
                     Tensor x = rand({5, 4}, rng);
                     const Tensor r = direction({5, 3}, rng);
                     std::vector<GradTarget> t = {{"x", x}, {"weight", a.weight}, {"bias", a.bias}};
                     return check([&] { return project(affine_forward(x, a), r); }, t, o);
                   }});
  items.push_back({"layers", "bspline_kan", kCompositeTolerance, [grid](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     const BSplineKanLayer l = BSplineKanLayer::create(3, 4, grid, 3, rng);
                     condition(l.parameters(), rng);
                     Tensor x = kan_input({5, 3}, grid, rng);
                     const Tensor r = direction({5, 4}, rng);
                     std::vector<GradTarget> t = {{"x", x},
                                                  {"base_weight", l.base_weight},
                                                  {"spline_weight", l.spline_weight},
                                                  {"coeffs", l.coeffs}};
                     return check([&] { return project(bspline_kan_forward(x, l), r); }, t, o);
                   }});
  items.push_back({"layers", "relukan", kCompositeTolerance, [grid](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     const ReLUKanLayer l = ReLUKanLayer::create(3, 4, grid, rng);
                     condition(l.parameters(), rng);
                     Tensor x = kan_input({5, 3}, grid, rng);
                     const Tensor r = direction({5, 4}, rng);
                     std::vector<GradTarget> t = {{"x", x}, {"weight", l.weight}, {"bias", l.bias}};
                     return check([&] { return project(relukan_forward(x, l), r); }, t, o);
                   }});
  for (const bool weighted : {false, true}) {
    items.push_back({"layers", weighted ? "efficientkan_basis_weights" : "efficientkan", kCompositeTolerance,
                     [grid, weighted](std::uint64_t seed, const GradCheckOptions& o) {
                       Rng rng(seed);
                       const EfficientKanLayer l = EfficientKanLayer::create(3, 4, grid, rng, weighted);
                       condition(l.parameters(), rng);
                       Tensor x = kan_input({5, 3}, grid, rng);
                       const Tensor r = direction({5, 4}, rng);
                       std::vector<GradTarget> t = {{"x", x}, {"weight", l.weight}, {"bias", l.bias}};
                       if (weighted) t.push_back({"basis_weight", l.basis_weight});
                       return check([&] { return project(efficientkan_forward(x, l), r); }, t, o);
                     }});
  }
}

void add_block_items(std::vector<SuiteItem>& items) {
  const KanGrid grid = KanGrid::make(5, 3);
  items.push_back({"blocks", "msa_kan", kCompositeTolerance, [grid](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     const MsaKanParams p = MsaKanParams::create(8, 2, grid, rng);
                     Tensor x = rand({2, 4, 8}, rng, -2.0, 2.0);
                     const Tensor r = direction({2, 4, 8}, rng);
                     std::vector<GradTarget> t = named("param", p.parameters());
                     t.insert(t.begin(), {"x", x});
                     return check([&] { return project(msa_kan(x, p), r); }, t, o);
                   }});
  for (const BlockOrder order : {BlockOrder::kAsWritten, BlockOrder::kPreNorm}) {
    const std::string name = order == BlockOrder::kAsWritten ? "kansformer_block" : "kansformer_block_prenorm";
    items.push_back({"blocks", name, kCompositeTolerance, [grid, order](std::uint64_t seed, const GradCheckOptions& o) {
                       Rng rng(seed);
                       const KansformerBlockParams p = KansformerBlockParams::create(8, 2, grid, rng, order);
                       Tensor x = rand({2, 4, 8}, rng, -2.0, 2.0);
                       const Tensor r = direction({2, 4, 8}, rng);
                       std::vector<GradTarget> t = named("param", p.parameters());
                       t.insert(t.begin(), {"x", x});
                       return check([&] { return project(kansformer_block(x, p), r); }, t, o);
                     }});
  }
  items.push_back({"blocks", "encoder_stack", kCompositeTolerance, [grid](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(seed);
                     const EncoderStack s = EncoderStack::create(1, 4, 8, 2, grid, rng);
                     Tensor x = rand({2, 4, 8}, rng, -2.0, 2.0);
                     const Tensor r = direction({2, 4, 8}, rng);
                     std::vector<GradTarget> t = named("param", s.parameters());
                     t.insert(t.begin(), {"x", x});
                     return check([&] { return project(encoder_forward(x, s), r); }, t, o);
                   }});
}

void add_model_items(std::vector<SuiteItem>& items) {
  items.push_back({"model", "micro_transukan", kCompositeTolerance, [](std::uint64_t seed, const GradCheckOptions& o) {
                     ModelConfig c;
                     c.image_height = c.image_width = 16;
                     c.d_model = 8;
                     c.depth = 1;
                     c.n_heads = 2;
                     const TransUKanModel m = TransUKanModel::create(c, seed);
                     Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
                     Tensor x = rand({2, 1, 16, 16}, rng, 0.0, 1.0);
                     std::vector<Label> y(2 * 16 * 16);
                     for (Label& v : y) v = std::uniform_int_distribution<Label>(0, 1)(rng);
                     std::vector<GradTarget> t = named("param", m.parameters());
                     t.insert(t.begin(), {"image", x});
                     GradCheckOptions sampled = o;
                     sampled.max_coords = 4;
                     return check([&] { return combined_loss(forward(x, m), y, {0.5, 0.5}); }, t, sampled);
                   }});
}

}  // namespace

GradScope parse_grad_scope(const std::string& name) {
  if (name == "ops") return GradScope::kOps;
  if (name == "layers") return GradScope::kLayers;
  if (name == "blocks") return GradScope::kBlocks;
  if (name == "model") return GradScope::kModel;
  if (name == "all") return GradScope::kAll;
  throw ConfigError("unknown gradcheck scope '" + name + "' (expected ops, layers, blocks, model or all)");
}

Tensor faulty_scale(const Tensor& x, double s) {
  Tensor out = x.clone();
  for (double& v : out.data()) v *= s;
  if (should_record({&x})) {
    record_op(out, [x, s](std::span<const double> g) mutable {
      auto xg = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += 1.01 * s * g[i];
    });
  }
  return out;
}

SuiteResult run_gradcheck_suite(GradScope scope, const SuiteOptions& options, const SuiteProgress& progress) {
  if (options.seeds == 0) throw ConfigError("gradcheck: seeds must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SuiteItem> items;
  if (scope == GradScope::kOps || scope == GradScope::kAll) add_op_items(items, options.inject_fault);
  if (scope == GradScope::kLayers || scope == GradScope::kAll) add_layer_items(items);
  if (scope == GradScope::kBlocks || scope == GradScope::kAll) add_block_items(items);
  if (scope == GradScope::kModel || scope == GradScope::kAll) add_model_items(items);
  if (options.inject_fault && scope != GradScope::kOps && scope != GradScope::kAll) {
    items.push_back(unary("faulty_scale", {3, 4}, [](const Tensor& x) { return faulty_scale(x, 2.0); }));
  }

  SuiteResult result;
  result.pass = true;
  for (const SuiteItem& item : items) {
    SuiteItemResult r;
    r.scope = item.scope;
    r.name = item.name;
    r.tolerance = item.tolerance;
    for (std::size_t k = 0; k < options.seeds; ++k) {
      const std::uint64_t seed = options.base_seed + k;
      GradCheckOptions o;
      o.h = options.h;
      o.tol = item.tolerance;
      o.seed = seed;
      const GradCheckReport rep = item.run(seed, o);
      for (const GradCheckItem& g : rep.items) {
        r.coords_checked += g.checked;
        r.kinks_skipped += g.kinks_skipped;
        if (g.max_rel_err > r.max_rel_err || (k == 0 && r.worst_target.empty())) {
          r.max_rel_err = g.max_rel_err;
          r.worst_seed = seed;
          r.worst_target = g.name;
          r.autodiff_at_worst = g.autodiff_at_worst;
          r.numeric_at_worst = g.numeric_at_worst;
        }
      }
    }
    r.pass = r.max_rel_err < r.tolerance;
    result.pass = result.pass && r.pass;
    if (progress) progress(r);
    result.items.push_back(std::move(r));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace tukan
