#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cope/datamodel.hpp"
#include "cope/nn.hpp"

namespace cope {

struct VisualEncoderConfig {
  std::uint32_t image_size = 32;
  std::uint32_t patch_size = 8;
  int embed_dim = 64;
  int cct_blocks = 2;
  int heads = 4;
  int mlp_ratio = 2;
  std::uint32_t max_frames = 8;
  bool temporal_exchange = true;

  std::uint32_t num_patches() const {
    const std::uint32_t side = image_size / patch_size;
    return side * side;
  }
  void validate() const;
};

// Patch embedding, N cross-frame communication blocks, then a one-layer
// multi-frame integration transformer whose outputs are mean-pooled.
//
// Within each block the per-frame class tokens first exchange information:
// every class token attends to the class tokens of the *other* frames (the
// attention output projection starts at zero), the message is added back as a
// residual, and the usual spatial transformer block then runs per frame. A
// single-frame input has nothing to exchange with, so the step is skipped and
// T = 1 is exactly degenerate.
class VisualEncoder {
 public:
  struct Cache {
    std::vector<Matrix> patches;
    std::vector<nn::LayerNormCache> exchange_ln;
    std::vector<nn::AttentionCache> exchange_attn;
    std::vector<std::vector<nn::TransformerBlockCache>> blocks;  // [block][frame]
    nn::TransformerBlockCache mit;
    std::size_t frames = 0;
  };

  VisualEncoder() = default;
  VisualEncoder(nn::ParameterSet& params, const VisualEncoderConfig& cfg, Rng& rng);

  const VisualEncoderConfig& config() const { return cfg_; }

  // z_t^(0) = [cls; patch_embed(patchify(frame_t))] + spatial, one matrix per frame.
  std::vector<Matrix> embed_frame_tokens(const nn::ParameterSet& p, const Frames& frames) const;
  // Applies block `index` (0-based) to all frames' token states.
  std::vector<Matrix> cct_block(const nn::ParameterSet& p, const std::vector<Matrix>& states, int index) const;
  // Adds temporal encodings, runs the integration layer, averages over frames.
  Vector mit_aggregate(const nn::ParameterSet& p, const Matrix& class_tokens) const;

  Vector encode(const nn::ParameterSet& p, const Frames& frames) const;
  Vector forward(const nn::ParameterSet& p, const Frames& frames, Cache& cache) const;
  void backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dz, nn::GradientSet& g) const;

  nn::ParamId class_token() const { return cls_; }
  nn::ParamId spatial_positions() const { return spatial_; }
  nn::ParamId temporal_positions() const { return temporal_; }
  const nn::Linear& patch_embedding() const { return patch_embed_; }
  const nn::TransformerBlock& integration_block() const { return mit_; }
  const nn::MultiHeadAttention& exchange_attention(int index) const { return exchange_attn_[static_cast<std::size_t>(index)]; }

 private:
  void check_input(const Frames& frames) const;
  void exchange(const nn::ParameterSet& p, std::vector<Matrix>& states, int index, nn::LayerNormCache* ln_cache,
                nn::AttentionCache* attn_cache) const;

  VisualEncoderConfig cfg_;
  nn::Linear patch_embed_;
  nn::ParamId cls_, spatial_, temporal_;
  std::vector<nn::LayerNorm> exchange_ln_;
  std::vector<nn::MultiHeadAttention> exchange_attn_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::TransformerBlock mit_;
};

struct TextEncoderConfig {
  std::uint32_t vocab_size = 256;
  int embed_dim = 64;
  int layers = 3;
  int heads = 4;
  int mlp_ratio = 2;
  std::uint32_t max_len = 16;

  void validate() const;
};

// Token id 0 is padding and is masked out as an attention key.
class TextEncoder {
 public:
  struct Cache {
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> key_valid;
    std::vector<nn::TransformerBlockCache> layers;
  };

  TextEncoder() = default;
  TextEncoder(nn::ParameterSet& params, const TextEncoderConfig& cfg, Rng& rng);

  const TextEncoderConfig& config() const { return cfg_; }

  Vector encode(const nn::ParameterSet& p, std::span<const std::int32_t> tokens) const;
  Vector forward(const nn::ParameterSet& p, std::span<const std::int32_t> tokens, Cache& cache) const;
  void backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dh, nn::GradientSet& g) const;

  nn::ParamId token_embedding() const { return token_embed_; }

 private:
  TextEncoderConfig cfg_;
  nn::ParamId token_embed_, cls_, positions_;
  std::vector<nn::TransformerBlock> layers_;
};

}  // namespace cope
