#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "transukan/kan.hpp"
#include "transukan/kansformer.hpp"
#include "transukan/model.hpp"

namespace tukan {

// FLOP conventions: one multiply-accumulate is 2 flops, a transcendental
// (exp) is 4. Bias additions are not counted.
inline constexpr std::uint64_t kTranscendentalFlops = 4;
/// silu(x) = x / (1 + exp(-x)): exp + add + divide + multiply-free negate.
inline constexpr std::uint64_t kSiluFlops = kTranscendentalFlops + 3;
/// GELU in the MLP baseline (tanh form): one transcendental plus 6 ops.
inline constexpr std::uint64_t kGeluFlops = kTranscendentalFlops + 6;
/// One ReLU-KAN basis response: two differences, two clamps, a product,
/// a square and the normalization.
inline constexpr std::uint64_t kReluKanBasisOps = 7;
/// One B-spline basis value of the given degree by Cox-de Boor: each of the
/// `degree` recursion levels costs two differences, two scalings and an add
/// plus the blend multiply; level zero is one comparison.
constexpr std::uint64_t bspline_basis_ops(std::uint64_t degree) { return 1 + 6 * degree; }

inline constexpr std::uint64_t kBytesPerElement = 8;

struct CostEntry {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t activation_bytes = 0;
};

struct CostReport {
  std::string variant;
  std::vector<CostEntry> entries;

  void add(const CostEntry& e) { entries.push_back(e); }
  void append(const CostReport& other, const std::string& prefix = "");
  CostEntry totals() const;
};

// ---------------------------------------------------------------------------
// Per-layer closed forms. `rows` is the number of input vectors (batch times
// tokens); activation bytes count everything kept for the backward pass.

CostEntry affine_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t rows);
CostEntry layernorm_cost(const std::string& name, std::size_t d, std::size_t rows);
/// Per-edge evaluation: every edge keeps its own basis vector and spline sum.
CostEntry bspline_kan_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t grid_size,
                           std::size_t degree, std::size_t rows);
CostEntry relukan_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t n_basis,
                       std::size_t rows);
CostEntry efficientkan_cost(const std::string& name, std::size_t in, std::size_t out, std::size_t n_basis,
                            std::size_t rows, bool basis_weights = false);
/// Scaled dot-product core (scores, softmax, context) without projections.
CostEntry attention_core_cost(const std::string& name, std::size_t batch, std::size_t tokens, std::size_t d_model,
                              std::size_t heads);
CostEntry conv_cost(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                    std::size_t stride, std::size_t padding, std::size_t batch, std::size_t height,
                    std::size_t width);

// ---------------------------------------------------------------------------
// Reports for constructed structures (closed forms from their dimensions).

CostReport cost_report(const Affine& layer, std::size_t rows);
CostReport cost_report(const BSplineKanLayer& layer, std::size_t rows);
CostReport cost_report(const ReLUKanLayer& layer, std::size_t rows);
CostReport cost_report(const EfficientKanLayer& layer, std::size_t rows);
CostReport cost_report(const KansformerBlockParams& block, std::size_t batch, std::size_t tokens);
CostReport cost_report(const EncoderStack& stack, std::size_t batch);
CostReport cost_report(const ModelConfig& config, std::size_t batch);
CostReport cost_report(const TransUKanModel& model, std::size_t batch);

/// Projections of a full report onto one quantity; other fields are zero.
CostReport params_only(CostReport r);
CostReport flops_only(CostReport r);
CostReport bytes_only(CostReport r);

template <typename T>
CostReport count_params(const T& x) {
  if constexpr (requires { cost_report(x, std::size_t{1}); }) {
    return params_only(cost_report(x, 1));
  } else {
    return params_only(cost_report(x, 1, 1));
  }
}
template <typename T, typename... Dims>
CostReport estimate_flops(const T& x, Dims... dims) {
  return flops_only(cost_report(x, static_cast<std::size_t>(dims)...));
}
template <typename T, typename... Dims>
CostReport estimate_activation_memory(const T& x, Dims... dims) {
  return bytes_only(cost_report(x, static_cast<std::size_t>(dims)...));
}

// ---------------------------------------------------------------------------
// Substitution study over the transformer encoder.

enum class Variant { kMlp, kBSplineKan, kReLUKan, kEfficientKan };

std::string variant_name(Variant v);
/// Accepts mlp, bspline, relukan, efficientkan.
Variant parse_variant(const std::string& name);
std::vector<Variant> all_variants();

/// Basis responses one layer keeps for the backward pass: one vector per
/// edge for the B-spline layer, one per input neuron for ReLU-KAN and
/// EfficientKAN, none for an affine layer.
std::uint64_t retained_basis_elements(Variant v, std::size_t in, std::size_t out, std::size_t n_basis,
                                      std::size_t rows);

struct ArchConfig {
  std::size_t d_model = 64;
  std::size_t depth = 4;
  std::size_t n_heads = 4;
  std::size_t n_tokens = 64;
  std::size_t batch = 8;
  std::size_t grid_size = 5;  // G
  std::size_t order = 3;      // K; also the B-spline degree so all KANs share G+K bases
  std::size_t mlp_ratio = 4;
  BlockOrder block_order = BlockOrder::kAsWritten;

  /// Throws ConfigError on zero sizes or d_model not divisible by heads.
  void validate() const;
};

/// Encoder stack with the feed-forward and Q/K/V maps realized as `v`. The
/// MLP variant is a standard block: affine Q/K/V, d -> ratio*d -> d MLP.
CostReport encoder_variant_report(const ArchConfig& arch, Variant v);

struct VariantComparison {
  ArchConfig arch;
  std::vector<CostReport> reports;  // one per requested variant, in request order

  const CostReport* find(Variant v) const;
};

VariantComparison compare_variants(const ArchConfig& arch, const std::vector<Variant>& variants = all_variants());

struct OrderingCheck {
  std::string description;
  bool pass = false;
};

/// params(EfficientKAN) < params(MLP) < params(ReLUKAN) and
/// bytes(BSplineKAN) > bytes(EfficientKAN), for whichever variants are present.
std::vector<OrderingCheck> check_orderings(const VariantComparison& cmp);

/// variant<TAB>layer<TAB>params<TAB>flops<TAB>bytes, one line per entry plus
/// a "total" line per variant.
void write_tsv(std::ostream& out, const VariantComparison& cmp);
/// Totals per variant with ratios against the first variant.
void write_table(std::ostream& out, const VariantComparison& cmp);

}  // namespace tukan
