#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "transukan/kan.hpp"
#include "transukan/kansformer.hpp"
#include "transukan/tensor.hpp"

namespace tukan {

/// Channel plans of the toy backbone. Encoder stage i keeps a skip at
/// resolution H / 2^i with kEncoderChannels[i] channels; decoder block i
/// produces kDecoderChannels[i] channels at resolution H / 2^(2 - i).
inline constexpr std::array<std::size_t, 3> kEncoderChannels{16, 32, 64};
inline constexpr std::array<std::size_t, 3> kDecoderChannels{32, 16, 8};

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t n_classes = 2;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t d_model = 64;
  std::size_t depth = 4;
  std::size_t n_heads = 4;
  KanGrid grid;
  BlockOrder block_order = BlockOrder::kAsWritten;

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
  std::size_t n_tokens() const { return (image_height / 8) * (image_width / 8); }
  bool operator==(const ModelConfig&) const = default;
};

struct ConvParams {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]

  static ConvParams create(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng);
  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

/// {3x3 conv, relu, stride-2 3x3 conv, relu}; the skip is taken after the
/// first relu.
struct CnnStage {
  ConvParams conv;
  ConvParams down;
};

struct CnnEncoderParams {
  std::array<CnnStage, 3> stages;

  static CnnEncoderParams create(std::size_t in_channels, Rng& rng);
  std::vector<Tensor> parameters() const;
};

/// Per-location affine map from the deepest CNN channels to d_model.
struct PatchEmbedParams {
  Affine proj;

  std::vector<Tensor> parameters() const { return proj.parameters(); }
};

/// Three {2x nearest upsample, concat skip, 3x3 conv, relu} blocks, then a
/// 1x1 head to class logits.
struct DecoderParams {
  std::array<ConvParams, 3> blocks;
  ConvParams head;

  static DecoderParams create(std::size_t d_model, std::size_t n_classes, Rng& rng);
  std::vector<Tensor> parameters() const;
};

struct TransUKanModel {
  ModelConfig config;
  CnnEncoderParams cnn;
  PatchEmbedParams embed;
  EncoderStack encoder;
  DecoderParams decoder;

  static TransUKanModel create(const ModelConfig& config, std::uint64_t seed);
  /// Every parameter tensor in declaration order (the checkpoint order).
  std::vector<Tensor> parameters() const;
};

struct CnnFeatures {
  Tensor features;            // [B, 64, H/8, W/8]
  std::vector<Tensor> skips;  // shallow to deep: H, H/2, H/4
};

CnnFeatures cnn_encode(const Tensor& image, const CnnEncoderParams& p);
/// [B,C,h,w] feature map -> [B, h*w, d_model] tokens.
Tensor patch_embed(const Tensor& features, const PatchEmbedParams& p);
/// [B,T,d] tokens -> [B,d,h,w] grid.
Tensor tokens_to_grid(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w);
Tensor decode(const Tensor& grid, const std::vector<Tensor>& skips, const DecoderParams& p);

/// Full pipeline; returns unnormalized logits [B, n_classes, H, W]. Errors
/// carry the name of the failing stage.
Tensor forward(const Tensor& image, const TransUKanModel& model);

}  // namespace tukan
