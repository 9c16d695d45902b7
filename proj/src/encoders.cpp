#include "cope/encoders.hpp"

#include "cope/errors.hpp"
#include "cope/synthetic.hpp"

namespace cope {

using nn::ParamGroup;

void VisualEncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("visual: image_size must be a positive multiple of patch_size");
  }
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("visual: embed_dim must be divisible by heads");
  }
  if (cct_blocks < 1) throw ConfigError("visual: cct_blocks must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("visual: mlp_ratio must be >= 1");
  if (max_frames < 1) throw ConfigError("visual: max_frames must be >= 1");
}

VisualEncoder::VisualEncoder(nn::ParameterSet& params, const VisualEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto d = Eigen::Index{cfg.embed_dim};
  const auto patch_len = Eigen::Index{cfg.patch_size} * cfg.patch_size * 3;
  const auto group = ParamGroup::visual_encoder;
  patch_embed_ = nn::Linear(params, "visual.patch_embed", patch_len, d, group, rng);
  cls_ = params.add("visual.class_token", 1, d, group, false);
  spatial_ = params.add("visual.spatial_pos", Eigen::Index{cfg.num_patches()} + 1, d, group, false);
  temporal_ = params.add("visual.temporal_pos", cfg.max_frames, d, group, false);
  nn::init_normal(params[cls_], rng, 0.02);
  nn::init_normal(params[spatial_], rng, 0.02);
  nn::init_normal(params[temporal_], rng, 0.02);
  for (int n = 0; n < cfg.cct_blocks; ++n) {
    const std::string name = "visual.cct" + std::to_string(n);
    if (cfg.temporal_exchange) {
      exchange_ln_.emplace_back(params, name + ".exchange_ln", d, group);
      exchange_attn_.emplace_back(params, name + ".exchange", d, cfg.heads, group, rng, /*zero_output=*/true);
    }
    blocks_.emplace_back(params, name + ".block", d, cfg.heads, cfg.mlp_ratio, group, rng);
  }
  mit_ = nn::TransformerBlock(params, "visual.mit", d, cfg.heads, cfg.mlp_ratio, group, rng);
}

void VisualEncoder::check_input(const Frames& frames) const {
  if (frames.frames < 1) throw ShapeError("video has no frames");
  if (frames.frames > cfg_.max_frames) {
    throw CapacityError("video has " + std::to_string(frames.frames) + " frames; encoder holds at most " +
                        std::to_string(cfg_.max_frames));
  }
  if (frames.height != cfg_.image_size || frames.width != cfg_.image_size || frames.channels != 3) {
    throw ShapeError("frame shape " + std::to_string(frames.height) + "x" + std::to_string(frames.width) +
                     " does not match encoder image size " + std::to_string(cfg_.image_size));
  }
}

std::vector<Matrix> VisualEncoder::embed_frame_tokens(const nn::ParameterSet& p, const Frames& frames) const {
  check_input(frames);
  std::vector<Matrix> states;
  states.reserve(frames.frames);
  for (std::uint32_t t = 0; t < frames.frames; ++t) {
    const Matrix patches = patchify(frames.frame(t), frames.height, frames.width, cfg_.patch_size);
    Matrix tokens(patches.rows() + 1, cfg_.embed_dim);
    tokens.row(0) = p[cls_].row(0);
    tokens.bottomRows(patches.rows()) = patch_embed_.forward(p, patches);
    tokens += p[spatial_];
    states.push_back(std::move(tokens));
  }
  return states;
}

void VisualEncoder::exchange(const nn::ParameterSet& p, std::vector<Matrix>& states, int index,
                             nn::LayerNormCache* ln_cache, nn::AttentionCache* attn_cache) const {
  if (!cfg_.temporal_exchange || states.size() < 2) return;
  const auto n = static_cast<std::size_t>(index);
  Matrix class_tokens(static_cast<Eigen::Index>(states.size()), cfg_.embed_dim);
  for (std::size_t t = 0; t < states.size(); ++t) class_tokens.row(static_cast<Eigen::Index>(t)) = states[t].row(0);
  nn::LayerNormCache ln_local;
  nn::AttentionCache attn_local;
  const Matrix normed = exchange_ln_[n].forward(p, class_tokens, ln_cache ? *ln_cache : ln_local);
  const Matrix message = exchange_attn_[n].forward(p, normed, attn_cache ? *attn_cache : attn_local,
                                                   nn::AttentionMask{nullptr, /*exclude_self=*/true});
  for (std::size_t t = 0; t < states.size(); ++t) states[t].row(0) += message.row(static_cast<Eigen::Index>(t));
}

std::vector<Matrix> VisualEncoder::cct_block(const nn::ParameterSet& p, const std::vector<Matrix>& states,
                                             int index) const {
  std::vector<Matrix> out = states;
  exchange(p, out, index, nullptr, nullptr);
  nn::TransformerBlockCache scratch;
  for (auto& z : out) z = blocks_[static_cast<std::size_t>(index)].forward(p, z, scratch);
  return out;
}

Vector VisualEncoder::mit_aggregate(const nn::ParameterSet& p, const Matrix& class_tokens) const {
  if (class_tokens.rows() > static_cast<Eigen::Index>(cfg_.max_frames)) {
    throw CapacityError("more class tokens than temporal positions");
  }
  nn::TransformerBlockCache scratch;
  const Matrix x = class_tokens + p[temporal_].topRows(class_tokens.rows());
  return mit_.forward(p, x, scratch).colwise().mean().transpose();
}

Vector VisualEncoder::encode(const nn::ParameterSet& p, const Frames& frames) const {
  Cache cache;
  return forward(p, frames, cache);
}

Vector VisualEncoder::forward(const nn::ParameterSet& p, const Frames& frames, Cache& cache) const {
  check_input(frames);
  const std::size_t T = frames.frames;
  cache.frames = T;
  cache.patches.resize(T);
  std::vector<Matrix> states(T);
  for (std::size_t t = 0; t < T; ++t) {
    cache.patches[t] = patchify(frames.frame(t), frames.height, frames.width, cfg_.patch_size);
    Matrix tokens(cache.patches[t].rows() + 1, cfg_.embed_dim);
    tokens.row(0) = p[cls_].row(0);
    tokens.bottomRows(cache.patches[t].rows()) = patch_embed_.forward(p, cache.patches[t]);
    tokens += p[spatial_];
    states[t] = std::move(tokens);
  }
  const auto n_blocks = blocks_.size();
  cache.blocks.assign(n_blocks, std::vector<nn::TransformerBlockCache>(T));
  cache.exchange_ln.assign(exchange_ln_.size(), {});
  cache.exchange_attn.assign(exchange_attn_.size(), {});
  for (std::size_t n = 0; n < n_blocks; ++n) {
    if (cfg_.temporal_exchange) {
      exchange(p, states, static_cast<int>(n), &cache.exchange_ln[n], &cache.exchange_attn[n]);
    }
    for (std::size_t t = 0; t < T; ++t) states[t] = blocks_[n].forward(p, states[t], cache.blocks[n][t]);
  }
  Matrix x(static_cast<Eigen::Index>(T), cfg_.embed_dim);
  for (std::size_t t = 0; t < T; ++t) x.row(static_cast<Eigen::Index>(t)) = states[t].row(0);
  x += p[temporal_].topRows(static_cast<Eigen::Index>(T));
  return mit_.forward(p, x, cache.mit).colwise().mean().transpose();
}

void VisualEncoder::backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dz,
                             nn::GradientSet& g) const {
  const std::size_t T = cache.frames;
  const auto rows = static_cast<Eigen::Index>(T);
  Matrix dy(rows, cfg_.embed_dim);
  dy.rowwise() = dz.transpose() / static_cast<double>(T);
  const Matrix dx = mit_.backward(p, cache.mit, dy, g);
  g[temporal_].topRows(rows) += dx;

  const Eigen::Index tokens = Eigen::Index{cfg_.num_patches()} + 1;
  std::vector<Matrix> dstates(T, Matrix::Zero(tokens, cfg_.embed_dim));
  for (std::size_t t = 0; t < T; ++t) dstates[t].row(0) = dx.row(static_cast<Eigen::Index>(t));

  for (std::size_t n = blocks_.size(); n-- > 0;) {
    for (std::size_t t = 0; t < T; ++t) dstates[t] = blocks_[n].backward(p, cache.blocks[n][t], dstates[t], g);
    if (cfg_.temporal_exchange && T > 1) {
      Matrix dmessage(rows, cfg_.embed_dim);
      for (std::size_t t = 0; t < T; ++t) dmessage.row(static_cast<Eigen::Index>(t)) = dstates[t].row(0);
      const Matrix dnormed = exchange_attn_[n].backward(p, cache.exchange_attn[n], dmessage, g);
      const Matrix dclass = exchange_ln_[n].backward(p, cache.exchange_ln[n], dnormed, g);
      for (std::size_t t = 0; t < T; ++t) dstates[t].row(0) += dclass.row(static_cast<Eigen::Index>(t));
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    g[spatial_] += dstates[t];
    g[cls_].row(0) += dstates[t].row(0);
    patch_embed_.backward(p, cache.patches[t], dstates[t].bottomRows(tokens - 1), g);
  }
}

void TextEncoderConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("text: vocab_size must be >= 2");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("text: embed_dim must be divisible by heads");
  }
  if (layers < 1) throw ConfigError("text: layers must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("text: mlp_ratio must be >= 1");
  if (max_len < 1) throw ConfigError("text: max_len must be >= 1");
}

TextEncoder::TextEncoder(nn::ParameterSet& params, const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto d = Eigen::Index{cfg.embed_dim};
  const auto group = ParamGroup::text_encoder;
  token_embed_ = params.add("text.token_embed", cfg.vocab_size, d, group, false);
  cls_ = params.add("text.class_token", 1, d, group, false);
  positions_ = params.add("text.positions", Eigen::Index{cfg.max_len} + 1, d, group, false);
  nn::init_normal(params[token_embed_], rng, 1.0);
  nn::init_normal(params[cls_], rng, 0.02);
  nn::init_normal(params[positions_], rng, 0.02);
  for (int l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(params, "text.layer" + std::to_string(l), d, cfg.heads, cfg.mlp_ratio, group, rng);
  }
}

Vector TextEncoder::encode(const nn::ParameterSet& p, std::span<const std::int32_t> tokens) const {
  Cache cache;
  return forward(p, tokens, cache);
}

Vector TextEncoder::forward(const nn::ParameterSet& p, std::span<const std::int32_t> tokens, Cache& cache) const {
  if (tokens.size() > cfg_.max_len) {
    throw CapacityError("text has " + std::to_string(tokens.size()) + " tokens; encoder holds at most " +
                        std::to_string(cfg_.max_len));
  }
  for (std::int32_t tok : tokens) {
    if (tok < 0 || static_cast<std::uint32_t>(tok) >= cfg_.vocab_size) {
      throw VocabularyError("token id " + std::to_string(tok) + " outside vocabulary of size " +
                            std::to_string(cfg_.vocab_size));
    }
  }
  const auto len = static_cast<Eigen::Index>(tokens.size()) + 1;
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.key_valid.assign(static_cast<std::size_t>(len), 1);
  Matrix x(len, cfg_.embed_dim);
  x.row(0) = p[cls_].row(0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i) + 1) = p[token_embed_].row(tokens[i]);
    if (tokens[i] == kPadToken) cache.key_valid[i + 1] = 0;
  }
  x += p[positions_].topRows(len);
  cache.layers.resize(layers_.size());
  const nn::AttentionMask mask{&cache.key_valid, false};
  for (std::size_t l = 0; l < layers_.size(); ++l) x = layers_[l].forward(p, x, cache.layers[l], mask);
  return x.row(0).transpose();
}

void TextEncoder::backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dh,
                           nn::GradientSet& g) const {
  const auto len = static_cast<Eigen::Index>(cache.tokens.size()) + 1;
  Matrix dx = Matrix::Zero(len, cfg_.embed_dim);
  dx.row(0) = dh.transpose();
  for (std::size_t l = layers_.size(); l-- > 0;) dx = layers_[l].backward(p, cache.layers[l], dx, g);
  g[positions_].topRows(len) += dx;
  g[cls_].row(0) += dx.row(0);
  for (std::size_t i = 0; i < cache.tokens.size(); ++i) {
    g[token_embed_].row(cache.tokens[i]) += dx.row(static_cast<Eigen::Index>(i) + 1);
  }
}

}  // namespace cope
