#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "cope/checkpoint.hpp"
#include "cope/config_file.hpp"
#include "cope/errors.hpp"
#include "cope/trainer.hpp"
#include "support/oracle.hpp"

using namespace cope;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model = testing::tiny_model_config(1);
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.max_lr = {1e-3, 1e-3, 1e-3};
  cfg.products_per_batch = 4;
  cfg.instances_per_product = 2;
  cfg.steps_per_epoch = 6;
  cfg.seed = 21;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints") {
  const long total = 1000, warm = 100;
  const double peak = 5e-3;
  CHECK(lr_at(0, total, warm, peak) == 0.0);
  CHECK(std::abs(lr_at(warm, total, warm, peak) - peak) <= 1e-12);
  CHECK(std::abs(lr_at(warm + (total - warm) / 2, total, warm, peak) - 0.5 * peak) <= 1e-12);
  CHECK(std::abs(lr_at(total, total, warm, peak)) <= 1e-12);
  CHECK(std::abs(lr_at(50, total, warm, peak) - peak / 2) <= 1e-12);
  double prev = peak;
  for (long s = warm + 1; s <= total; ++s) {
    const double lr = lr_at(s, total, warm, peak);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.warmup_epochs = 1;
  CHECK_NOTHROW(cfg.validate());
  cfg.max_lr[1] = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.max_lr[1] = 1e-3;
  cfg.eval_every_epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  TrainConfig d;
  CHECK(d.epochs == 80);
  CHECK(d.warmup_epochs == 2);
  CHECK(d.max_lr == std::array<double, 3>{5e-5, 5e-7, 5e-3});
  CHECK(d.batch_size() == 84);
}

TEST_CASE("config file parsing") {
  const TrainConfig cfg = parse_train_config(
      "# toy run\n"
      "epochs = 20\n"
      "lr_visual = 1e-3   # override\n"
      "sampling = random\n"
      "alpha = 1,1,1,0.5,1,1,2\n"
      "embed_dim = 32\n"
      "temporal_exchange = false\n"
      "eval_every_epochs = 5\n");
  CHECK(cfg.epochs == 20);
  CHECK(cfg.max_lr[1] == 1e-3);
  CHECK(cfg.sampling == SamplingStrategy::random);
  CHECK(cfg.loss.alpha[3] == 0.5);
  CHECK(cfg.loss.alpha[6] == 2.0);
  CHECK(cfg.model.visual.embed_dim == 32);
  CHECK(cfg.model.text.embed_dim == 32);
  CHECK_FALSE(cfg.model.visual.temporal_exchange);
  CHECK(cfg.eval_every_epochs == 5);
  CHECK(parse_train_config(format_train_config(cfg)).epochs == 20);
  CHECK(format_train_config(parse_train_config(format_train_config(cfg))) == format_train_config(cfg));

  CHECK_THROWS_AS(parse_train_config("colour = blue\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("alpha = 1,2\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("epochs\n"), ConfigError);
}

TEST_CASE("one optimizer step lowers the loss on its batch") {
  const Corpus corpus = generate_synthetic_corpus(testing::tiny_corpus_config(5));
  ModelConfig mcfg = testing::tiny_model_config(5);
  CopeModel model(mcfg);
  const ClassIndex classes(corpus);
  Rng rng(3);
  const TripleBatch batch = sample_batch_balanced(corpus, classes, 3, 2, rng);
  const LossWeights w;
  nn::GradientSet g(model.parameters());
  const double before = batch_loss(model, batch, w, &g).total;
  AdamW opt(model.parameters(), 0.05);
  opt.step(model.parameters(), g, {1e-3, 1e-3, 1e-3});
  const double after = batch_loss(model, batch, w, nullptr).total;
  CHECK(after < before);
}

TEST_CASE("two epochs on a ten-product corpus lower the loss") {
  const Corpus corpus = generate_synthetic_corpus(testing::tiny_corpus_config(10));
  const TrainResult r = train(tiny_train_config(), corpus);
  REQUIRE(r.log.size() == 12);
  CHECK(r.log.back().loss.total < r.log.front().loss.total);
  CHECK(r.log.front().step == 1);
  CHECK(r.log.back().epoch == 1);
  CHECK(r.model.config().num_classes == 10);
}

TEST_CASE("training is deterministic for a seed") {
  const Corpus corpus = generate_synthetic_corpus(testing::tiny_corpus_config(6));
  TrainConfig cfg = tiny_train_config();
  cfg.steps_per_epoch = 3;
  auto log_text = [&](const TrainConfig& c) {
    std::string s;
    for (const auto& rec : train(c, corpus).log) s += rec.to_json_line() + "\n";
    return s;
  };
  const std::string a = log_text(cfg);
  CHECK(a == log_text(cfg));
  cfg.seed += 1;
  CHECK(a != log_text(cfg));
}

TEST_CASE("step log lines carry every term") {
  const Corpus corpus = generate_synthetic_corpus(testing::tiny_corpus_config(4));
  TrainConfig cfg = tiny_train_config();
  cfg.products_per_batch = 2;
  cfg.steps_per_epoch = 1;
  const auto line = train(cfg, corpus).log.front().to_json_line();
  const auto j = nlohmann::json::parse(line);
  for (const char* key : {"step", "epoch", "loss_total", "loss_cd", "loss_cls", "loss_channels", "lr", "grad_norm"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["loss_channels"].size() == 7);
  CHECK(j["lr"].contains("visual_encoder"));
}

TEST_CASE("non-finite inputs abort with the offending term") {
  auto samples = generate_synthetic_corpus(testing::tiny_corpus_config(4)).samples();
  for (auto& s : samples) {
    if (s.domain == Domain::L) s.frames.data[0] = std::nanf("");
  }
  const Corpus corpus(samples);
  TrainConfig cfg = tiny_train_config();
  cfg.products_per_batch = 2;
  try {
    train(cfg, corpus);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("channel_") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip") {
  const Corpus corpus = generate_synthetic_corpus(testing::tiny_corpus_config(4));
  TrainConfig cfg = tiny_train_config();
  cfg.products_per_batch = 2;
  cfg.steps_per_epoch = 2;
  const CopeModel model = train(cfg, corpus).model;
  const fs::path dir = fs::temp_directory_path() / "cope_tests";
  fs::create_directories(dir);
  save_checkpoint(model, dir / "a.ckpt");
  const CopeModel loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  REQUIRE(loaded.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const Matrix& a = model.parameters().value(i);
    const Matrix& b = loaded.parameters().value(i);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, a.cwiseAbs().maxCoeff()));
  }
  CHECK(model_config_to_json(loaded.config()) == model_config_to_json(model.config()));

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
