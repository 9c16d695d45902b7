#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "cope/datamodel.hpp"

namespace cope {

struct SyntheticConfig {
  std::uint32_t n_products = 10;
  std::uint32_t n_categories = 3;
  // Samples per product for P, V, L.
  std::array<std::uint32_t, 3> per_domain_counts{2, 2, 2};
  std::uint32_t frames_video = 8;
  std::uint32_t frames_live = 8;
  std::uint32_t image_size = 32;
  std::uint32_t vocab_size = 256;
  std::uint32_t text_len = 12;
  double noise_level = 0.1;
  // Fraction of live-stream frames rendered from unrelated products.
  double distractor_fraction = 0.25;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Token id 0 is padding; ids [1, kStopwordCount] are shared "stopwords".
inline constexpr std::int32_t kPadToken = 0;
inline constexpr std::int32_t kStopwordCount = 8;

// Deterministic in cfg: the same cfg yields a bit-identical corpus.
Corpus generate_synthetic_corpus(const SyntheticConfig& cfg);

// Everything needed to re-render a synthetic sample's frames. Serialized into
// the manifest's frames_ref as "synth:a=..;s=..;t=..;hw=..;n=..;x=..".
struct SynthDescriptor {
  std::uint64_t appearance_seed = 0;
  std::uint64_t sample_seed = 0;
  std::uint32_t frames = 1;
  std::uint32_t image_size = 32;
  double noise_level = 0.0;
  double distractor_fraction = 0.0;

  std::string to_ref() const;
  static bool is_ref(std::string_view ref);
  // Throws ParseError on malformed input.
  static SynthDescriptor parse(std::string_view ref);
};

Frames render_synthetic(const SynthDescriptor& desc, Domain domain);

// Splits each product's per-domain samples (sample_id order) into the first
// `train_per_domain` for training and the rest for held-out evaluation.
std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, std::uint32_t train_per_domain);

}  // namespace cope
