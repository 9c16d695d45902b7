#include "cope/config_file.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cope/errors.hpp"

namespace cope {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected an integer, got \"" + std::string(v) + "\"");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got \"" + s + "\"");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false");
}

std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, std::string_view key, std::string_view value) {
  value = trim(value);
  auto& m = cfg.model;
  if (key == "epochs") {
    cfg.epochs = parse_int<int>(key, value);
  } else if (key == "warmup_epochs") {
    cfg.warmup_epochs = parse_int<int>(key, value);
  } else if (key == "lr_text") {
    cfg.max_lr[0] = parse_real(key, value);
  } else if (key == "lr_visual") {
    cfg.max_lr[1] = parse_real(key, value);
  } else if (key == "lr_other") {
    cfg.max_lr[2] = parse_real(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_real(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_int<std::uint64_t>(key, value);
  } else if (key == "sampling") {
    if (value == "balanced") {
      cfg.sampling = SamplingStrategy::balanced;
    } else if (value == "random") {
      cfg.sampling = SamplingStrategy::random;
    } else {
      throw ConfigError("sampling: expected balanced or random");
    }
  } else if (key == "products_per_batch") {
    cfg.products_per_batch = parse_int<std::size_t>(key, value);
  } else if (key == "instances_per_product") {
    cfg.instances_per_product = parse_int<std::size_t>(key, value);
  } else if (key == "random_batch_size") {
    cfg.random_batch_size = parse_int<std::size_t>(key, value);
  } else if (key == "alpha") {
    std::size_t n = 0;
    std::string_view rest = value;
    while (true) {
      const auto comma = rest.find(',');
      if (n >= 7) throw ConfigError("alpha: expected exactly seven weights");
      cfg.loss.alpha[n++] = parse_real(key, trim(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (n != 7) throw ConfigError("alpha: expected exactly seven weights");
  } else if (key == "beta") {
    cfg.loss.beta = parse_real(key, value);
  } else if (key == "tau") {
    cfg.loss.tau = parse_real(key, value);
  } else if (key == "steps_per_epoch") {
    cfg.steps_per_epoch = parse_int<int>(key, value);
  } else if (key == "eval_every_epochs") {
    cfg.eval_every_epochs = parse_int<int>(key, value);
  } else if (key == "grad_clip") {
    cfg.grad_clip = parse_real(key, value);
  } else if (key == "patch_size") {
    m.visual.patch_size = parse_int<std::uint32_t>(key, value);
  } else if (key == "embed_dim") {
    m.visual.embed_dim = m.text.embed_dim = parse_int<int>(key, value);
  } else if (key == "cct_blocks") {
    m.visual.cct_blocks = parse_int<int>(key, value);
  } else if (key == "heads") {
    m.visual.heads = m.text.heads = parse_int<int>(key, value);
  } else if (key == "mlp_ratio") {
    m.visual.mlp_ratio = m.text.mlp_ratio = parse_int<int>(key, value);
  } else if (key == "max_frames") {
    m.visual.max_frames = parse_int<std::uint32_t>(key, value);
  } else if (key == "temporal_exchange") {
    m.visual.temporal_exchange = parse_bool(key, value);
  } else if (key == "vocab_size") {
    m.text.vocab_size = parse_int<std::uint32_t>(key, value);
  } else if (key == "text_layers") {
    m.text.layers = parse_int<int>(key, value);
  } else if (key == "max_text_len") {
    m.text.max_len = parse_int<std::uint32_t>(key, value);
  } else if (key == "classifier_hidden") {
    m.classifier_hidden = parse_int<int>(key, value);
  } else {
    throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  }
}

TrainConfig parse_train_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_entry(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

std::string format_train_config(const TrainConfig& cfg) {
  std::ostringstream out;
  const auto& m = cfg.model;
  out << "epochs = " << cfg.epochs << '\n'
      << "warmup_epochs = " << cfg.warmup_epochs << '\n'
      << "lr_text = " << real(cfg.max_lr[0]) << '\n'
      << "lr_visual = " << real(cfg.max_lr[1]) << '\n'
      << "lr_other = " << real(cfg.max_lr[2]) << '\n'
      << "weight_decay = " << real(cfg.weight_decay) << '\n'
      << "seed = " << cfg.seed << '\n'
      << "sampling = " << (cfg.sampling == SamplingStrategy::balanced ? "balanced" : "random") << '\n'
      << "products_per_batch = " << cfg.products_per_batch << '\n'
      << "instances_per_product = " << cfg.instances_per_product << '\n'
      << "random_batch_size = " << cfg.random_batch_size << '\n'
      << "alpha = ";
  for (std::size_t n = 0; n < 7; ++n) out << (n ? "," : "") << real(cfg.loss.alpha[n]);
  out << '\n'
      << "beta = " << real(cfg.loss.beta) << '\n'
      << "tau = " << real(cfg.loss.tau) << '\n'
      << "steps_per_epoch = " << cfg.steps_per_epoch << '\n'
      << "grad_clip = " << real(cfg.grad_clip) << '\n'
      << "eval_every_epochs = " << cfg.eval_every_epochs << '\n'
      << "patch_size = " << m.visual.patch_size << '\n'
      << "embed_dim = " << m.visual.embed_dim << '\n'
      << "cct_blocks = " << m.visual.cct_blocks << '\n'
      << "heads = " << m.visual.heads << '\n'
      << "mlp_ratio = " << m.visual.mlp_ratio << '\n'
      << "max_frames = " << m.visual.max_frames << '\n'
      << "temporal_exchange = " << (m.visual.temporal_exchange ? "true" : "false") << '\n'
      << "vocab_size = " << m.text.vocab_size << '\n'
      << "text_layers = " << m.text.layers << '\n'
      << "max_text_len = " << m.text.max_len << '\n'
      << "classifier_hidden = " << m.classifier_hidden << '\n';
  return out.str();
}

}  // namespace cope
