#include "transukan/model.hpp"

#include <cmath>
#include <string>

#include "transukan/error.hpp"
#include "transukan/ops.hpp"

namespace tukan {

namespace {

void append(std::vector<Tensor>& dst, const std::vector<Tensor>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

template <class Fn>
auto in_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_with_context(e, stage);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels == 0 || n_classes < 2) throw ConfigError("model: need in_channels >= 1 and n_classes >= 2");
  if (image_height == 0 || image_width == 0 || image_height % 8 != 0 || image_width % 8 != 0) {
    throw ConfigError("model: image dims " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " must be positive multiples of 8");
  }
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " must be a positive multiple of n_heads " +
                      std::to_string(n_heads));
  }
  KanGrid::make(grid.grid_size, grid.order, grid.range_lo, grid.range_hi);
}

ConvParams ConvParams::create(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng) {
  // He-uniform for relu stacks.
  const double bound = std::sqrt(6.0 / static_cast<double>(in * kernel * kernel));
  return ConvParams{Tensor::uniform({out, in, kernel, kernel}, -bound, bound, rng).set_requires_grad(),
                    Tensor::zeros({out}).set_requires_grad()};
}

CnnEncoderParams CnnEncoderParams::create(std::size_t in_channels, Rng& rng) {
  CnnEncoderParams p;
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t ch = kEncoderChannels[i];
    p.stages[i].conv = ConvParams::create(in, ch, 3, rng);
    p.stages[i].down = ConvParams::create(ch, ch, 3, rng);
    in = ch;
  }
  return p;
}

std::vector<Tensor> CnnEncoderParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& s : stages) {
    append(out, s.conv.parameters());
    append(out, s.down.parameters());
  }
  return out;
}

DecoderParams DecoderParams::create(std::size_t d_model, std::size_t n_classes, Rng& rng) {
  DecoderParams p;
  std::size_t in = d_model;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t skip_ch = kEncoderChannels[2 - i];
    p.blocks[i] = ConvParams::create(in + skip_ch, kDecoderChannels[i], 3, rng);
    in = kDecoderChannels[i];
  }
  p.head = ConvParams::create(in, n_classes, 1, rng);
  return p;
}

std::vector<Tensor> DecoderParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks) append(out, b.parameters());
  append(out, head.parameters());
  return out;
}

TransUKanModel TransUKanModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  TransUKanModel m;
  m.config = config;
  m.cnn = CnnEncoderParams::create(config.in_channels, rng);
  m.embed.proj = Affine::create(kEncoderChannels[2], config.d_model, rng);
  m.encoder = EncoderStack::create(config.depth, config.n_tokens(), config.d_model, config.n_heads, config.grid, rng,
                                   config.block_order);
  m.decoder = DecoderParams::create(config.d_model, config.n_classes, rng);
  return m;
}

std::vector<Tensor> TransUKanModel::parameters() const {
  std::vector<Tensor> out;
  append(out, cnn.parameters());
  append(out, embed.parameters());
  append(out, encoder.parameters());
  append(out, decoder.parameters());
  return out;
}

CnnFeatures cnn_encode(const Tensor& image, const CnnEncoderParams& p) {
  if (!image.defined() || image.rank() != 4) throw DimensionError("cnn_encode: expected [B,C,H,W] image");
  if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
    throw ConfigError("cnn_encode: image " + shape_str(image.shape()) + " spatial dims must be divisible by 8");
  }
  CnnFeatures out;
  Tensor x = image;
  for (const CnnStage& s : p.stages) {
    x = relu(conv2d(x, s.conv.weight, s.conv.bias, 1, 1));
    out.skips.push_back(x);
    x = relu(conv2d(x, s.down.weight, s.down.bias, 2, 1));
  }
  out.features = x;
  return out;
}

Tensor patch_embed(const Tensor& features, const PatchEmbedParams& p) {
  const std::size_t B = features.dim(0), C = features.dim(1), h = features.dim(2), w = features.dim(3);
  const Tensor tokens = reshape(permute(features, {0, 2, 3, 1}), {B, h * w, C});
  return affine_forward(tokens, p.proj);
}

Tensor tokens_to_grid(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w) {
  const std::size_t B = tokens.dim(0), d = tokens.dim(2);
  if (tokens.dim(1) != grid_h * grid_w) {
    throw DimensionError("tokens_to_grid: " + std::to_string(tokens.dim(1)) + " tokens for a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  return permute(reshape(tokens, {B, grid_h, grid_w, d}), {0, 3, 1, 2});
}

Tensor decode(const Tensor& grid, const std::vector<Tensor>& skips, const DecoderParams& p) {
  if (skips.size() != 3) throw DimensionError("decode: expected 3 skip tensors");
  Tensor x = grid;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor parts[] = {upsample_nearest_2x(x), skips[2 - i]};
    x = relu(conv2d(concat(parts, 1), p.blocks[i].weight, p.blocks[i].bias, 1, 1));
  }
  return conv2d(x, p.head.weight, p.head.bias, 1, 0);
}

Tensor forward(const Tensor& image, const TransUKanModel& model) {
  const ModelConfig& cfg = model.config;
  if (!image.defined() || image.rank() != 4 || image.dim(1) != cfg.in_channels) {
    throw DimensionError("forward: expected [B," + std::to_string(cfg.in_channels) + ",H,W] image, got " +
                         (image.defined() ? shape_str(image.shape()) : "<undefined>"));
  }
  const CnnFeatures feats = in_stage("cnn_encode", [&] { return cnn_encode(image, model.cnn); });
  const Tensor tokens = in_stage("patch_embed", [&] { return patch_embed(feats.features, model.embed); });
  const Tensor encoded = in_stage("encoder", [&] { return encoder_forward(tokens, model.encoder); });
  const std::size_t gh = feats.features.dim(2), gw = feats.features.dim(3);
  return in_stage("decoder", [&] { return decode(tokens_to_grid(encoded, gh, gw), feats.skips, model.decoder); });
}

}  // namespace tukan
