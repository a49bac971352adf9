#pragma once

#include <cstddef>
#include <vector>

#include "transukan/kan.hpp"
#include "transukan/tensor.hpp"

namespace tukan {

struct Affine {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static Affine create(std::size_t in, std::size_t out, Rng& rng);
  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

Tensor affine_forward(const Tensor& x, const Affine& layer);

struct LayerNormParams {
  Tensor gamma;  // ones
  Tensor beta;   // zeros

  static LayerNormParams create(std::size_t d);
  std::vector<Tensor> parameters() const { return {gamma, beta}; }
};

/// Multi-head self-attention whose Q, K and V maps are single EfficientKAN
/// layers; the output projection stays affine.
struct MsaKanParams {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  EfficientKanLayer q_proj, k_proj, v_proj;
  Affine out_proj;

  static MsaKanParams create(std::size_t d_model, std::size_t n_heads, const KanGrid& grid, Rng& rng);
  std::size_t head_dim() const { return d_model / n_heads; }
  std::vector<Tensor> parameters() const;
};

/// How the two residual branches are arranged.
enum class BlockOrder {
  /// z' = MSA(EKAN(LN(z))) + z;  z_out = EKAN(LN(z')) + z'
  kAsWritten,
  /// z' = MSA(LN(z)) + z;  z_out = EKAN(LN(z')) + z'   (kan1 unused and not listed as a parameter)
  kPreNorm,
};

struct KansformerBlockParams {
  LayerNormParams ln1, ln2;
  EfficientKanLayer kan1, kan2;
  MsaKanParams msa;
  BlockOrder order = BlockOrder::kAsWritten;

  static KansformerBlockParams create(std::size_t d_model, std::size_t n_heads, const KanGrid& grid, Rng& rng,
                                      BlockOrder order = BlockOrder::kAsWritten);
  std::vector<Tensor> parameters() const;
};

struct EncoderStack {
  std::vector<KansformerBlockParams> blocks;
  Tensor pos_embed;  // [n_tokens, d_model]

  static EncoderStack create(std::size_t depth, std::size_t n_tokens, std::size_t d_model, std::size_t n_heads,
                             const KanGrid& grid, Rng& rng, BlockOrder order = BlockOrder::kAsWritten);
  std::size_t depth() const { return blocks.size(); }
  std::vector<Tensor> parameters() const;
};

/// x[B,T,d] -> [B,T,d]. When `attention` is non-null it receives the
/// softmax weights [B, heads, T, T].
Tensor msa_kan(const Tensor& x, const MsaKanParams& p, Tensor* attention = nullptr);
Tensor kansformer_block(const Tensor& z_prev, const KansformerBlockParams& p);
/// Adds the positional embedding, then applies the blocks in order.
Tensor encoder_forward(const Tensor& tokens, const EncoderStack& stack);

}  // namespace tukan
