#include "transukan/profiler.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "transukan/error.hpp"

namespace tukan {

namespace {

using u64 = std::uint64_t;

u64 U(std::size_t v) { return static_cast<u64>(v); }

CostEntry activation_cost(const std::string& name, std::size_t elements, u64 flops_per_element) {
  return {name, 0, U(elements) * flops_per_element, U(elements) * kBytesPerElement};
}

// Elementwise residual add: backward needs no stored values.
CostEntry residual_cost(const std::string& name, std::size_t elements) { return {name, 0, U(elements), 0}; }

std::string block_name(std::size_t i) { return "block" + std::to_string(i); }

// Feed-forward/projection layer of the given variant, d_in -> d_out.
CostEntry variant_layer_cost(Variant v, const std::string& name, std::size_t in, std::size_t out,
                             const ArchConfig& a, std::size_t rows) {
  const std::size_t n = a.grid_size + a.order;
  switch (v) {
    case Variant::kMlp:
      return affine_cost(name, in, out, rows);
    case Variant::kBSplineKan:
      return bspline_kan_cost(name, in, out, a.grid_size, a.order, rows);
    case Variant::kReLUKan:
      return relukan_cost(name, in, out, n, rows);
    case Variant::kEfficientKan:
      return efficientkan_cost(name, in, out, n, rows);
  }
  throw ContractError("unknown variant");
}

ArchConfig arch_of(const EncoderStack& stack, std::size_t batch) {
  if (stack.blocks.empty()) throw ContractError("cost_report: empty encoder stack");
  const KansformerBlockParams& b = stack.blocks.front();
  ArchConfig a;
  a.d_model = b.msa.d_model;
  a.depth = stack.blocks.size();
  a.n_heads = b.msa.n_heads;
  a.n_tokens = stack.pos_embed.dim(0);
  a.batch = batch;
  a.grid_size = b.kan2.grid.grid_size;
  a.order = b.kan2.grid.order;
  a.block_order = b.order;
  return a;
}

}  // namespace

void CostReport::append(const CostReport& other, const std::string& prefix) {
  for (CostEntry e : other.entries) {
    if (!prefix.empty()) e.name = prefix + "." + e.name;
    entries.push_back(std::move(e));
  }
}

CostEntry CostReport::totals() const {
  CostEntry t{"total", 0, 0, 0};
  for (const CostEntry& e : entries) {
    t.params += e.params;
    t.flops += e.flops;
    t.activation_bytes += e.activation_bytes;
  }
  return t;
}

CostEntry affine_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t rows) {
  return {name, U(in) * U(out) + U(out), 2 * U(rows) * U(in) * U(out), (U(rows) * (U(in) + U(out))) * kBytesPerElement};
}

CostEntry layernorm_cost(const std::string& name, std::size_t d, std::size_t rows) {
  // Mean, variance, normalize, scale, shift: about 8 flops per element.
  return {name, 2 * U(d), 8 * U(rows) * U(d), (2 * U(rows) * U(d) + 2 * U(rows)) * kBytesPerElement};
}

std::uint64_t retained_basis_elements(Variant v, std::size_t in, std::size_t out, std::size_t n_basis,
                                      std::size_t rows) {
  const u64 per_neuron = U(rows) * U(in) * U(n_basis);
  switch (v) {
    case Variant::kMlp:
      return 0;
    case Variant::kBSplineKan:
      return per_neuron * U(out);
    case Variant::kReLUKan:
    case Variant::kEfficientKan:
      return per_neuron;
  }
  throw ContractError("unknown variant");
}

CostEntry bspline_kan_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t grid_size,
                           std::size_t degree, std::size_t rows) {
  const u64 n = U(grid_size) + U(degree), R = U(rows), I = U(in), O = U(out);
  CostEntry e{name, 0, 0, 0};
  e.params = O * I * n + 2 * O * I;
  e.flops = R * I * kSiluFlops + R * I * n * bspline_basis_ops(degree) + R * I * O * (2 * n + 4);
  // input, silu(input), per-edge basis, per-edge spline value, output
  e.activation_bytes =
      (R * I + R * I + retained_basis_elements(Variant::kBSplineKan, in, out, n, rows) + R * I * O + R * O) *
      kBytesPerElement;
  return e;
}

CostEntry relukan_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t n_basis,
                       std::size_t rows) {
  const u64 n = U(n_basis), R = U(rows), I = U(in), O = U(out);
  CostEntry e{name, 0, 0, 0};
  e.params = O * n * I + O;
  e.flops = R * I * n * kReluKanBasisOps + 2 * R * O * n * I;
  e.activation_bytes = (R * I + retained_basis_elements(Variant::kReLUKan, in, out, n, rows) + R * O) * kBytesPerElement;
  return e;
}

CostEntry efficientkan_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t n_basis,
                            std::size_t rows, bool basis_weights) {
  const u64 n = U(n_basis), R = U(rows), I = U(in), O = U(out);
  CostEntry e{name, 0, 0, 0};
  e.params = I * O + O + (basis_weights ? I * n : 0);
  // expansion, pooling (n - 1 adds and one scale), square, affine
  e.flops = R * I * n * kReluKanBasisOps + R * I * n + R * I + 2 * R * I * O + (basis_weights ? R * I * n : 0);
  // input, basis, pooled, squared, output (+ weighted basis)
  e.activation_bytes = (R * I + retained_basis_elements(Variant::kEfficientKan, in, out, n, rows) + R * I + R * I +
                        R * O + (basis_weights ? R * I * n : 0)) *
                       kBytesPerElement;
  return e;
}

CostEntry attention_core_cost(const std::string& name, std::size_t batch, std::size_t tokens, std::size_t d_model,
                              std::size_t heads) {
  const u64 B = U(batch), T = U(tokens), d = U(d_model), h = U(heads);
  CostEntry e{name, 0, 0, 0};
  // scores, scaling, softmax (subtract, exp, sum, divide), context
  e.flops = 2 * B * T * T * d + B * h * T * T + B * h * T * T * (kTranscendentalFlops + 3) + 2 * B * T * T * d;
  e.activation_bytes = (B * h * T * T + B * T * d) * kBytesPerElement;
  return e;
}

CostEntry conv_cost(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                    std::size_t stride, std::size_t padding, std::size_t batch, std::size_t height,
                    std::size_t width) {
  if (stride == 0 || kernel > height + 2 * padding || kernel > width + 2 * padding) {
    throw DimensionError("conv_cost: kernel does not fit the padded input");
  }
  const u64 Ho = (height + 2 * padding - kernel) / stride + 1, Wo = (width + 2 * padding - kernel) / stride + 1;
  const u64 C = U(in_ch), O = U(out_ch), k = U(kernel), B = U(batch);
  CostEntry e{name, 0, 0, 0};
  e.params = O * C * k * k + O;
  e.flops = 2 * O * C * k * k * Ho * Wo * B;
  e.activation_bytes = (B * C * U(height) * U(width) + B * O * Ho * Wo) * kBytesPerElement;
  return e;
}

CostReport cost_report(const Affine& layer, std::size_t rows) {
  CostReport r;
  r.add(affine_cost("affine", layer.weight.dim(1), layer.weight.dim(0), rows));
  return r;
}

CostReport cost_report(const BSplineKanLayer& layer, std::size_t rows) {
  CostReport r;
  r.add(bspline_kan_cost("bspline_kan", layer.c_in, layer.c_out, layer.grid.grid_size,
                         static_cast<std::size_t>(layer.spline_degree), rows));
  return r;
}

CostReport cost_report(const ReLUKanLayer& layer, std::size_t rows) {
  CostReport r;
  r.add(relukan_cost("relukan", layer.c_in, layer.c_out, layer.grid.n_basis(), rows));
  return r;
}

CostReport cost_report(const EfficientKanLayer& layer, std::size_t rows) {
  CostReport r;
  r.add(efficientkan_cost("efficientkan", layer.c_in, layer.c_out, layer.grid.n_basis(), rows,
                          layer.basis_weight.defined()));
  return r;
}

CostReport cost_report(const KansformerBlockParams& block, std::size_t batch, std::size_t tokens) {
  ArchConfig a;
  a.d_model = block.msa.d_model;
  a.depth = 1;
  a.n_heads = block.msa.n_heads;
  a.n_tokens = tokens;
  a.batch = batch;
  a.grid_size = block.kan2.grid.grid_size;
  a.order = block.kan2.grid.order;
  a.block_order = block.order;
  CostReport full = encoder_variant_report(a, Variant::kEfficientKan);
  CostReport r;
  r.variant = full.variant;
  for (const CostEntry& e : full.entries) {
    if (e.name.rfind("block0.", 0) == 0) r.add({e.name.substr(7), e.params, e.flops, e.activation_bytes});
  }
  return r;
}

CostReport cost_report(const EncoderStack& stack, std::size_t batch) {
  return encoder_variant_report(arch_of(stack, batch), Variant::kEfficientKan);
}

CostReport cost_report(const ModelConfig& c, std::size_t batch) {
  c.validate();
  CostReport r;
  r.variant = "transukan";
  std::size_t H = c.image_height, W = c.image_width, ch = c.in_channels;
  for (std::size_t i = 0; i < kEncoderChannels.size(); ++i) {
    const std::string s = "cnn.stage" + std::to_string(i);
    const std::size_t out = kEncoderChannels[i];
    r.add(conv_cost(s + ".conv", ch, out, 3, 1, 1, batch, H, W));
    r.add(activation_cost(s + ".relu", batch * out * H * W, 1));
    r.add(conv_cost(s + ".down", out, out, 3, 2, 1, batch, H, W));
    H /= 2;
    W /= 2;
    r.add(activation_cost(s + ".down_relu", batch * out * H * W, 1));
    ch = out;
  }
  r.add(affine_cost("embed", ch, c.d_model, batch * c.n_tokens()));
  ArchConfig a;
  a.d_model = c.d_model;
  a.depth = c.depth;
  a.n_heads = c.n_heads;
  a.n_tokens = c.n_tokens();
  a.batch = batch;
  a.grid_size = c.grid.grid_size;
  a.order = c.grid.order;
  a.block_order = c.block_order;
  r.append(encoder_variant_report(a, Variant::kEfficientKan), "encoder");
  ch = c.d_model;
  for (std::size_t i = 0; i < kDecoderChannels.size(); ++i) {
    const std::string s = "decoder.block" + std::to_string(i);
    H *= 2;
    W *= 2;
    const std::size_t skip = kEncoderChannels[kEncoderChannels.size() - 1 - i];
    r.add(conv_cost(s + ".conv", ch + skip, kDecoderChannels[i], 3, 1, 1, batch, H, W));
    r.add(activation_cost(s + ".relu", batch * kDecoderChannels[i] * H * W, 1));
    ch = kDecoderChannels[i];
  }
  r.add(conv_cost("decoder.head", ch, c.n_classes, 1, 1, 0, batch, H, W));
  return r;
}

CostReport cost_report(const TransUKanModel& model, std::size_t batch) { return cost_report(model.config, batch); }

CostReport params_only(CostReport r) {
  for (CostEntry& e : r.entries) e.flops = e.activation_bytes = 0;
  return r;
}

CostReport flops_only(CostReport r) {
  for (CostEntry& e : r.entries) e.params = e.activation_bytes = 0;
  return r;
}

CostReport bytes_only(CostReport r) {
  for (CostEntry& e : r.entries) e.params = e.flops = 0;
  return r;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kMlp:
      return "mlp";
    case Variant::kBSplineKan:
      return "bspline";
    case Variant::kReLUKan:
      return "relukan";
    case Variant::kEfficientKan:
      return "efficientkan";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected mlp, bspline, relukan or efficientkan)");
}

std::vector<Variant> all_variants() {
  return {Variant::kMlp, Variant::kBSplineKan, Variant::kReLUKan, Variant::kEfficientKan};
}

void ArchConfig::validate() const {
  if (d_model == 0 || depth == 0 || n_heads == 0 || n_tokens == 0 || batch == 0 || grid_size == 0 || mlp_ratio == 0) {
    throw ConfigError("arch config: sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("arch config: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
}

CostReport encoder_variant_report(const ArchConfig& a, Variant v) {
  a.validate();
  const std::size_t d = a.d_model, rows = a.batch * a.n_tokens;
  CostReport r;
  r.variant = variant_name(v);
  r.add({"pos_embed", U(a.n_tokens) * U(d), U(rows) * U(d), 0});
  for (std::size_t i = 0; i < a.depth; ++i) {
    const std::string b = block_name(i) + ".";
    r.add(layernorm_cost(b + "ln1", d, rows));
    if (v != Variant::kMlp && a.block_order == BlockOrder::kAsWritten) {
      r.add(variant_layer_cost(v, b + "kan1", d, d, a, rows));
    }
    for (const char* p : {"q_proj", "k_proj", "v_proj"}) r.add(variant_layer_cost(v, b + p, d, d, a, rows));
    r.add(attention_core_cost(b + "attention", a.batch, a.n_tokens, d, a.n_heads));
    r.add(affine_cost(b + "out_proj", d, d, rows));
    r.add(residual_cost(b + "residual1", rows * d));
    r.add(layernorm_cost(b + "ln2", d, rows));
    if (v == Variant::kMlp) {
      r.add(affine_cost(b + "fc1", d, a.mlp_ratio * d, rows));
      r.add(activation_cost(b + "gelu", rows * a.mlp_ratio * d, kGeluFlops));
      r.add(affine_cost(b + "fc2", a.mlp_ratio * d, d, rows));
    } else {
      r.add(variant_layer_cost(v, b + "kan2", d, d, a, rows));
    }
    r.add(residual_cost(b + "residual2", rows * d));
  }
  return r;
}

const CostReport* VariantComparison::find(Variant v) const {
  for (const CostReport& r : reports) {
    if (r.variant == variant_name(v)) return &r;
  }
  return nullptr;
}

VariantComparison compare_variants(const ArchConfig& arch, const std::vector<Variant>& variants) {
  arch.validate();
  if (variants.empty()) throw ConfigError("compare_variants: no variants requested");
  VariantComparison c;
  c.arch = arch;
  for (Variant v : variants) c.reports.push_back(encoder_variant_report(arch, v));
  return c;
}

std::vector<OrderingCheck> check_orderings(const VariantComparison& cmp) {
  std::vector<OrderingCheck> out;
  const CostReport* mlp = cmp.find(Variant::kMlp);
  const CostReport* bsp = cmp.find(Variant::kBSplineKan);
  const CostReport* rel = cmp.find(Variant::kReLUKan);
  const CostReport* eff = cmp.find(Variant::kEfficientKan);
  auto params = [](const CostReport* r) { return r->totals().params; };
  auto bytes = [](const CostReport* r) { return r->totals().activation_bytes; };
  if (eff && mlp) out.push_back({"params(efficientkan) < params(mlp)", params(eff) < params(mlp)});
  if (mlp && rel) out.push_back({"params(mlp) < params(relukan)", params(mlp) < params(rel)});
  if (eff && rel && !mlp) out.push_back({"params(efficientkan) < params(relukan)", params(eff) < params(rel)});
  if (bsp && eff) out.push_back({"bytes(bspline) > bytes(efficientkan)", bytes(bsp) > bytes(eff)});
  return out;
}

void write_tsv(std::ostream& out, const VariantComparison& cmp) {
  for (const CostReport& r : cmp.reports) {
    for (const CostEntry& e : r.entries) {
      out << r.variant << '\t' << e.name << '\t' << e.params << '\t' << e.flops << '\t' << e.activation_bytes << '\n';
    }
    const CostEntry t = r.totals();
    out << r.variant << "\ttotal\t" << t.params << '\t' << t.flops << '\t' << t.activation_bytes << '\n';
  }
}

void write_table(std::ostream& out, const VariantComparison& cmp) {
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %14s %16s %14s %9s %9s %9s\n", "variant", "params", "flops", "act_bytes",
                "params_x", "flops_x", "bytes_x");
  out << line;
  const CostEntry base = cmp.reports.front().totals();
  auto ratio = [](u64 a, u64 b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  for (const CostReport& r : cmp.reports) {
    const CostEntry t = r.totals();
    std::snprintf(line, sizeof line, "%-14s %14llu %16llu %14llu %9.3f %9.3f %9.3f\n", r.variant.c_str(),
                  static_cast<unsigned long long>(t.params), static_cast<unsigned long long>(t.flops),
                  static_cast<unsigned long long>(t.activation_bytes), ratio(t.params, base.params),
                  ratio(t.flops, base.flops), ratio(t.activation_bytes, base.activation_bytes));
    out << line;
  }
}

}  // namespace tukan
