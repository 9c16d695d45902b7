#include "cope/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>

#include "cope/errors.hpp"
#include "cope/rng.hpp"

namespace cope {

void SyntheticConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(std::string(field) + ": " + what);
  };
  require(n_products >= 1, "n_products", "must be >= 1");
  require(n_categories >= 1, "n_categories", "must be >= 1");
  require(per_domain_counts[0] >= 1, "per_domain_counts.P", "must be >= 1");
  require(per_domain_counts[1] >= 1, "per_domain_counts.V", "must be >= 1");
  require(per_domain_counts[2] >= 1, "per_domain_counts.L", "must be >= 1");
  require(frames_video >= 1, "frames_video", "must be >= 1");
  require(frames_live >= 1, "frames_live", "must be >= 1");
  require(image_size >= 1, "image_size", "must be >= 1");
  require(vocab_size >= static_cast<std::uint32_t>(kStopwordCount) + 2, "vocab_size",
          "must leave room for padding, stopwords and product tokens");
  require(text_len >= 1, "text_len", "must be >= 1");
  require(noise_level >= 0.0 && noise_level <= 1.0, "noise_level", "must lie in [0, 1]");
  require(distractor_fraction >= 0.0 && distractor_fraction < 1.0, "distractor_fraction",
          "must lie in [0, 1)");
}

namespace {

enum class ShapeKind { disc, square, ring };

struct Shape {
  ShapeKind kind;
  std::array<float, 3> color;
  double cx, cy, radius;
};

struct Appearance {
  std::array<float, 3> background;
  std::array<Shape, 3> shapes;
};

std::array<float, 3> random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
          static_cast<float>(rng.uniform())};
}

Appearance make_appearance(std::uint64_t seed) {
  Rng rng(seed);
  Appearance a;
  a.background = random_color(rng);
  for (auto& s : a.shapes) {
    s.kind = static_cast<ShapeKind>(rng.below(3));
    s.color = random_color(rng);
    s.cx = rng.uniform(0.25, 0.75);
    s.cy = rng.uniform(0.25, 0.75);
    s.radius = rng.uniform(0.12, 0.28);
  }
  return a;
}

struct View {
  double shift_x = 0, shift_y = 0, scale = 1, brightness = 0;
};

void render_frame(const Appearance& a, const View& v, double noise, Rng& noise_rng, std::uint32_t size,
                  std::span<float> out) {
  for (std::uint32_t y = 0; y < size; ++y) {
    for (std::uint32_t x = 0; x < size; ++x) {
      const double u = ((x + 0.5) / size - 0.5 - v.shift_x) / v.scale + 0.5;
      const double w = ((y + 0.5) / size - 0.5 - v.shift_y) / v.scale + 0.5;
      std::array<float, 3> c = a.background;
      for (const Shape& s : a.shapes) {
        const double dx = u - s.cx, dy = w - s.cy;
        bool inside = false;
        switch (s.kind) {
          case ShapeKind::disc:
            inside = dx * dx + dy * dy < s.radius * s.radius;
            break;
          case ShapeKind::square:
            inside = std::abs(dx) < s.radius * 0.8 && std::abs(dy) < s.radius * 0.8;
            break;
          case ShapeKind::ring: {
            const double r2 = dx * dx + dy * dy;
            inside = r2 < s.radius * s.radius && r2 > 0.36 * s.radius * s.radius;
            break;
          }
        }
        if (inside) c = s.color;
      }
      float* px = out.data() + (std::size_t{y} * size + x) * 3;
      for (int ch = 0; ch < 3; ++ch) {
        double value = c[ch] + v.brightness;
        if (noise > 0) value += noise_rng.uniform(-noise, noise);
        px[ch] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
}

std::string product_name(std::uint32_t index, std::uint32_t n_products) {
  int width = 4;
  for (std::uint32_t n = n_products; n >= 10000; n /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof buf, "prod-%0*u", width, index);
  return buf;
}

}  // namespace

std::string SynthDescriptor::to_ref() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "synth:a=%llu;s=%llu;t=%u;hw=%u;n=%.17g;x=%.17g",
                static_cast<unsigned long long>(appearance_seed),
                static_cast<unsigned long long>(sample_seed), frames, image_size, noise_level,
                distractor_fraction);
  return buf;
}

bool SynthDescriptor::is_ref(std::string_view ref) { return ref.starts_with("synth:"); }

SynthDescriptor SynthDescriptor::parse(std::string_view ref) {
  if (!is_ref(ref)) throw ParseError("not a synthetic frames_ref: " + std::string(ref));
  std::map<std::string, std::string, std::less<>> fields;
  std::string_view rest = ref.substr(6);
  while (!rest.empty()) {
    const auto semi = rest.find(';');
    const std::string_view item = rest.substr(0, semi);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ParseError("malformed frames_ref field: " + std::string(item));
    fields.emplace(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
    if (semi == std::string_view::npos) break;
    rest = rest.substr(semi + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError(std::string("frames_ref missing field ") + key);
    return it->second;
  };
  auto to_u64 = [&](const char* key) {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError(std::string("frames_ref field ") + key + " is not an integer");
    return v;
  };
  auto to_double = [&](const char* key) {
    const std::string& s = get(key);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) throw ParseError(std::string("frames_ref field ") + key + " is not a number");
    return v;
  };
  SynthDescriptor d;
  d.appearance_seed = to_u64("a");
  d.sample_seed = to_u64("s");
  d.frames = static_cast<std::uint32_t>(to_u64("t"));
  d.image_size = static_cast<std::uint32_t>(to_u64("hw"));
  d.noise_level = to_double("n");
  d.distractor_fraction = to_double("x");
  if (d.frames == 0 || d.image_size == 0) throw ParseError("frames_ref has an empty shape");
  return d;
}

Frames render_synthetic(const SynthDescriptor& desc, Domain domain) {
  const Appearance product = make_appearance(desc.appearance_seed);
  Rng rng(desc.sample_seed);

  Frames f;
  f.frames = desc.frames;
  f.height = f.width = desc.image_size;
  f.data.resize(std::size_t{f.frames} * f.frame_size());

  // Sample-level viewpoint; live streams show products at a wider range of
  // scales than pages or short videos.
  View base;
  base.shift_x = rng.uniform(-0.06, 0.06);
  base.shift_y = rng.uniform(-0.06, 0.06);
  switch (domain) {
    case Domain::P:
      base.scale = rng.uniform(0.95, 1.05);
      break;
    case Domain::V:
      base.scale = rng.uniform(0.85, 1.15);
      break;
    case Domain::L:
      base.scale = rng.uniform(0.7, 1.3);
      break;
  }
  const double noise = domain == Domain::P ? 0.5 * desc.noise_level : desc.noise_level;

  std::vector<bool> distractor(f.frames, false);
  if (domain == Domain::L && f.frames > 1) {
    auto n = static_cast<std::uint32_t>(std::floor(desc.distractor_fraction * f.frames + 0.5));
    n = std::min(n, f.frames - 1);
    std::vector<std::uint32_t> order(f.frames);
    for (std::uint32_t t = 0; t < f.frames; ++t) order[t] = t;
    rng.shuffle(order);
    for (std::uint32_t i = 0; i < n; ++i) distractor[order[i]] = true;
  }

  for (std::uint32_t t = 0; t < f.frames; ++t) {
    View v = base;
    if (domain != Domain::P) {
      v.shift_x += rng.uniform(-0.03, 0.03);
      v.shift_y += rng.uniform(-0.03, 0.03);
      v.scale *= rng.uniform(0.95, 1.05);
      v.brightness = rng.uniform(-0.08, 0.08);
    }
    const std::uint64_t other_seed = rng.next_u64();
    if (distractor[t]) {
      render_frame(make_appearance(other_seed), v, noise, rng, f.width, f.frame(t));
    } else {
      render_frame(product, v, noise, rng, f.width, f.frame(t));
    }
  }
  return f;
}

Corpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto product_tokens_available =
      static_cast<std::int32_t>(cfg.vocab_size) - 1 - kStopwordCount;
  constexpr int kTokensPerProduct = 4;

  std::vector<Sample> samples;
  for (std::uint32_t p = 0; p < cfg.n_products; ++p) {
    const std::string product_id = product_name(p, cfg.n_products);
    const std::uint64_t appearance_seed = derive_seed(cfg.seed, "appearance", p);
    Rng product_rng(derive_seed(cfg.seed, "product", p));
    const auto category = static_cast<std::uint32_t>(product_rng.below(cfg.n_categories));
    std::array<std::int32_t, kTokensPerProduct> vocab{};
    for (auto& tok : vocab) {
      tok = 1 + kStopwordCount + static_cast<std::int32_t>(product_rng.below(product_tokens_available));
    }

    for (Domain domain : kAllDomains) {
      const std::uint32_t count = cfg.per_domain_counts[domain_index(domain)];
      for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "-%s-%03u", std::string(to_string(domain)).c_str(), i);
        s.sample_id = product_id + suffix;
        s.product_id = product_id;
        s.category_id = category;
        s.domain = domain;
        const std::uint64_t sample_seed =
            derive_seed(cfg.seed, "sample", (std::uint64_t{p} << 24) ^ (domain_index(domain) << 20) ^ i);
        s.gen_seed = sample_seed;

        SynthDescriptor desc;
        desc.appearance_seed = appearance_seed;
        desc.sample_seed = sample_seed;
        desc.frames = domain == Domain::P ? 1 : (domain == Domain::V ? cfg.frames_video : cfg.frames_live);
        desc.image_size = cfg.image_size;
        desc.noise_level = cfg.noise_level;
        desc.distractor_fraction = cfg.distractor_fraction;
        s.frames_ref = desc.to_ref();
        s.frames = render_synthetic(desc, domain);

        if (domain == Domain::P) {
          Rng text_rng(derive_seed(sample_seed, "text"));
          const auto len = static_cast<std::uint32_t>(
              std::max<std::uint64_t>(1, cfg.text_len / 2 + text_rng.below(cfg.text_len - cfg.text_len / 2 + 1)));
          std::vector<std::int32_t> tokens(len);
          for (auto& tok : tokens) {
            if (text_rng.uniform() < 0.6) {
              tok = vocab[text_rng.below(kTokensPerProduct)];
            } else {
              tok = 1 + static_cast<std::int32_t>(text_rng.below(kStopwordCount));
            }
          }
          s.text_tokens = std::move(tokens);
        }
        samples.push_back(std::move(s));
      }
    }
  }
  return Corpus(std::move(samples));
}

std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, std::uint32_t train_per_domain) {
  std::vector<Sample> train, test;
  for (const auto& [id, entry] : corpus.products()) {
    for (const auto& indices : entry.by_domain) {
      for (std::size_t k = 0; k < indices.size(); ++k) {
        (k < train_per_domain ? train : test).push_back(corpus.samples()[indices[k]]);
      }
    }
  }
  return {Corpus(std::move(train)), Corpus(std::move(test))};
}

}  // namespace cope
