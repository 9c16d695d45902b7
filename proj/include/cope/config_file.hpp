#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "cope/trainer.hpp"

namespace cope {

// Flat "key = value" text, one entry per line, '#' starts a comment.
// Recognized keys (defaults in parentheses):
//   epochs (80)  warmup_epochs (2)  lr_text (5e-5)  lr_visual (5e-7)  lr_other (5e-3)
//   weight_decay (0.05)  seed (0)  sampling (balanced|random)
//   products_per_batch (28)  instances_per_product (3)  random_batch_size (0 = P*K)
//   alpha (seven comma-separated weights, all 1)  beta (1)  tau (0.07)
//   steps_per_epoch (0 = derived)  grad_clip (1.0)  eval_every_epochs (0 = off)
//   patch_size (8)  embed_dim (64)  cct_blocks (2)  heads (4)  mlp_ratio (2)  max_frames (8)
//   temporal_exchange (true)  vocab_size (256)  text_layers (3)  max_text_len (16)
//   classifier_hidden (0 = embed_dim)
// Unknown keys are a ConfigError.
void apply_config_entry(TrainConfig& cfg, std::string_view key, std::string_view value);
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});

// Inverse of parse_train_config: every key, in a fixed order.
std::string format_train_config(const TrainConfig& cfg);

}  // namespace cope
