#include "transukan/kansformer.hpp"

#include <cmath>
#include <string>

#include "transukan/error.hpp"
#include "transukan/ops.hpp"

namespace tukan {

namespace {

void append(std::vector<Tensor>& dst, const std::vector<Tensor>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void require_tokens(const Tensor& x, std::size_t d, const char* op) {
  if (!x.defined() || x.rank() != 3 || x.dim(2) != d) {
    throw DimensionError(std::string(op) + ": expected [B,T," + std::to_string(d) + "], got " +
                         (x.defined() ? shape_str(x.shape()) : "<undefined>"));
  }
}

}  // namespace

Affine Affine::create(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Affine{Tensor::uniform({out, in}, -bound, bound, rng).set_requires_grad(),
                Tensor::zeros({out}).set_requires_grad()};
}

Tensor affine_forward(const Tensor& x, const Affine& layer) { return linear(x, layer.weight, layer.bias); }

LayerNormParams LayerNormParams::create(std::size_t d) {
  return LayerNormParams{Tensor::ones({d}).set_requires_grad(), Tensor::zeros({d}).set_requires_grad()};
}

MsaKanParams MsaKanParams::create(std::size_t d_model, std::size_t n_heads, const KanGrid& grid, Rng& rng) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("MSA: d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  MsaKanParams p;
  p.d_model = d_model;
  p.n_heads = n_heads;
  p.q_proj = EfficientKanLayer::create(d_model, d_model, grid, rng);
  p.k_proj = EfficientKanLayer::create(d_model, d_model, grid, rng);
  p.v_proj = EfficientKanLayer::create(d_model, d_model, grid, rng);
  p.out_proj = Affine::create(d_model, d_model, rng);
  return p;
}

std::vector<Tensor> MsaKanParams::parameters() const {
  std::vector<Tensor> p;
  append(p, q_proj.parameters());
  append(p, k_proj.parameters());
  append(p, v_proj.parameters());
  append(p, out_proj.parameters());
  return p;
}

KansformerBlockParams KansformerBlockParams::create(std::size_t d_model, std::size_t n_heads, const KanGrid& grid,
                                                    Rng& rng, BlockOrder order) {
  KansformerBlockParams p;
  p.ln1 = LayerNormParams::create(d_model);
  p.ln2 = LayerNormParams::create(d_model);
  p.kan1 = EfficientKanLayer::create(d_model, d_model, grid, rng);
  p.msa = MsaKanParams::create(d_model, n_heads, grid, rng);
  p.kan2 = EfficientKanLayer::create(d_model, d_model, grid, rng);
  p.order = order;
  return p;
}

std::vector<Tensor> KansformerBlockParams::parameters() const {
  std::vector<Tensor> p;
  append(p, ln1.parameters());
  if (order == BlockOrder::kAsWritten) append(p, kan1.parameters());
  append(p, msa.parameters());
  append(p, ln2.parameters());
  append(p, kan2.parameters());
  return p;
}

EncoderStack EncoderStack::create(std::size_t depth, std::size_t n_tokens, std::size_t d_model, std::size_t n_heads,
                                  const KanGrid& grid, Rng& rng, BlockOrder order) {
  EncoderStack s;
  s.pos_embed = Tensor::uniform({n_tokens, d_model}, -0.02, 0.02, rng).set_requires_grad();
  for (std::size_t i = 0; i < depth; ++i) s.blocks.push_back(KansformerBlockParams::create(d_model, n_heads, grid, rng, order));
  return s;
}

std::vector<Tensor> EncoderStack::parameters() const {
  std::vector<Tensor> p{pos_embed};
  for (const auto& b : blocks) append(p, b.parameters());
  return p;
}

Tensor msa_kan(const Tensor& x, const MsaKanParams& p, Tensor* attention) {
  require_tokens(x, p.d_model, "msa_kan");
  const std::size_t B = x.dim(0), T = x.dim(1), h = p.n_heads, hd = p.head_dim();
  // [B,T,d] -> [B,h,T,hd]
  auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {B, T, h, hd}), {0, 2, 1, 3}); };
  const Tensor q = split_heads(efficientkan_forward(x, p.q_proj));
  const Tensor k = split_heads(efficientkan_forward(x, p.k_proj));
  const Tensor v = split_heads(efficientkan_forward(x, p.v_proj));
  const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
  const Tensor weights = softmax(scores, -1);
  if (attention != nullptr) *attention = weights;
  const Tensor ctx = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {B, T, p.d_model});
  return affine_forward(ctx, p.out_proj);
}

Tensor kansformer_block(const Tensor& z_prev, const KansformerBlockParams& p) {
  require_tokens(z_prev, p.msa.d_model, "kansformer_block");
  Tensor branch = layer_norm(z_prev, p.ln1.gamma, p.ln1.beta);
  if (p.order == BlockOrder::kAsWritten) branch = efficientkan_forward(branch, p.kan1);
  const Tensor z_mid = add(msa_kan(branch, p.msa), z_prev);
  const Tensor ffn = efficientkan_forward(layer_norm(z_mid, p.ln2.gamma, p.ln2.beta), p.kan2);
  return add(ffn, z_mid);
}

Tensor encoder_forward(const Tensor& tokens, const EncoderStack& stack) {
  if (!tokens.defined() || tokens.rank() != 3) {
    throw DimensionError("encoder_forward: expected [B,T,d] tokens");
  }
  if (tokens.dim(1) != stack.pos_embed.dim(0) || tokens.dim(2) != stack.pos_embed.dim(1)) {
    throw DimensionError("encoder_forward: tokens " + shape_str(tokens.shape()) +
                         " do not match positional embedding " + shape_str(stack.pos_embed.shape()));
  }
  Tensor z = add(tokens, stack.pos_embed);
  for (const auto& block : stack.blocks) z = kansformer_block(z, block);
  return z;
}

}  // namespace tukan
