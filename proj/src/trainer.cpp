#include "cope/trainer.hpp"

#include <cmath>
#include <numbers>

#include "cope/errors.hpp"
#include "json.hpp"

namespace cope {

std::size_t TrainConfig::batch_size() const {
  if (sampling == SamplingStrategy::random && random_batch_size > 0) return random_batch_size;
  return products_per_batch * instances_per_product;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (warmup_epochs >= epochs) throw ConfigError("warmup_epochs must be smaller than epochs");
  for (double lr : max_lr) {
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and > 0");
  }
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (products_per_batch < 2) throw ConfigError("products_per_batch must be >= 2");
  if (instances_per_product < 1) throw ConfigError("instances_per_product must be >= 1");
  if (sampling == SamplingStrategy::random && batch_size() < 2) throw ConfigError("batch size must be >= 2");
  if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
  if (eval_every_epochs < 0) throw ConfigError("eval_every_epochs must be >= 0");
  loss.validate();
}

double lr_at(long step, long total_steps, long warmup_steps, double max_lr) {
  if (step <= warmup_steps) {
    return warmup_steps > 0 ? max_lr * static_cast<double>(step) / static_cast<double>(warmup_steps) : max_lr;
  }
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const nn::ParameterSet& params, double weight_decay, double beta1, double beta2, double eps)
    : m_(params), v_(params), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(nn::ParameterSet& params, const nn::GradientSet& grads, const std::array<double, 3>& lr_by_group) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lr = lr_by_group[static_cast<std::size_t>(params.group(i))];
    Matrix& w = params.value(i);
    const Matrix& g = grads.at(i);
    Matrix& m = m_.at(i);
    Matrix& v = v_.at(i);
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    if (params.decay(i) && weight_decay_ > 0) w *= 1.0 - lr * weight_decay_;
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

LossBreakdown batch_loss(const CopeModel& model, const TripleBatch& batch, const LossWeights& weights,
                         nn::GradientSet* grads) {
  const std::size_t n = batch.size();
  if (n == 0) throw ContractError("empty batch");
  const int d = model.config().embed_dim();
  const int classes = model.config().num_classes;

  std::vector<CopeModel::TripleCache> caches(n);
  std::vector<TripleRepresentations> reps(n);
  BatchEmbeddings emb;
  for (auto& m : emb.reps) m.resize(static_cast<Eigen::Index>(n), d);
  emb.scores_p.resize(static_cast<Eigen::Index>(n), classes);
  emb.scores_v.resize(static_cast<Eigen::Index>(n), classes);
  emb.scores_l.resize(static_cast<Eigen::Index>(n), classes);
  emb.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const TripleItem& item = batch.items[i];
    reps[i] = model.forward_triple(*item.page, *item.video, *item.live, caches[i]);
    const auto r = static_cast<Eigen::Index>(i);
    emb.rep(Representation::fus_p).row(r) = reps[i].fus_p.transpose();
    emb.rep(Representation::vis_p).row(r) = reps[i].vis_p.transpose();
    emb.rep(Representation::txt_p).row(r) = reps[i].txt_p.transpose();
    emb.rep(Representation::vis_v).row(r) = reps[i].vis_v.transpose();
    emb.rep(Representation::vis_l).row(r) = reps[i].vis_l.transpose();
    emb.scores_p.row(r) = reps[i].scores_p.transpose();
    emb.scores_v.row(r) = reps[i].scores_v.transpose();
    emb.scores_l.row(r) = reps[i].scores_l.transpose();
    emb.labels[i] = item.class_index;
  }

  if (!grads) return total_loss(emb, weights);

  LossResult result = total_loss_with_gradients(emb, weights);
  const auto& g = result.gradients;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    TripleGradients tg;
    tg.fus_p = g.rep(Representation::fus_p).row(r).transpose();
    tg.vis_p = g.rep(Representation::vis_p).row(r).transpose();
    tg.txt_p = g.rep(Representation::txt_p).row(r).transpose();
    tg.vis_v = g.rep(Representation::vis_v).row(r).transpose();
    tg.vis_l = g.rep(Representation::vis_l).row(r).transpose();
    tg.scores_p = g.scores_p.row(r).transpose();
    tg.scores_v = g.scores_v.row(r).transpose();
    tg.scores_l = g.scores_l.row(r).transpose();
    model.backward_triple(caches[i], reps[i], tg, *grads);
  }
  return result.breakdown;
}

std::string StepRecord::to_json_line() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["loss_total"] = loss.total;
  j["loss_cd"] = loss.cross_domain;
  j["loss_cls"] = loss.classification;
  j["loss_channels"] = loss.channels;
  j["lr"] = {{"text_encoder", lr[0]}, {"visual_encoder", lr[1]}, {"other", lr[2]}};
  j["grad_norm"] = grad_norm;
  return j.dump();
}

ModelConfig model_config_for(const TrainConfig& config, const Corpus& corpus) {
  ModelConfig m = config.model;
  if (corpus.samples().empty()) throw ContractError("training corpus is empty");
  const std::uint32_t size = corpus.samples().front().frames.height;
  for (const Sample& s : corpus.samples()) {
    if (s.frames.height != size || s.frames.width != size) {
      throw ContractError("training corpus mixes frame sizes (" + s.sample_id + ")");
    }
  }
  m.visual.image_size = size;
  m.num_classes = static_cast<int>(corpus.products().size());
  return m;
}

int resolve_steps_per_epoch(const TrainConfig& config, const Corpus& corpus) {
  if (config.steps_per_epoch > 0) return config.steps_per_epoch;
  std::size_t triples = 0;
  for (const auto& [id, entry] : corpus.products()) {
    std::size_t most = 0;
    for (const auto& v : entry.by_domain) most = std::max(most, v.size());
    triples += most;
  }
  const std::size_t n = config.batch_size();
  return static_cast<int>(std::max<std::size_t>(1, (triples + n - 1) / n));
}

namespace {

void check_finite(const LossBreakdown& loss, long step) {
  auto fail = [&](const std::string& term) {
    throw NumericError("non-finite loss term " + term + " at step " + std::to_string(step));
  };
  for (std::size_t c = 0; c < loss.channels.size(); ++c) {
    if (!std::isfinite(loss.channels[c])) fail("channel_" + std::to_string(c + 1));
  }
  if (!std::isfinite(loss.cross_domain)) fail("loss_cd");
  if (!std::isfinite(loss.classification)) fail("loss_cls");
  if (!std::isfinite(loss.total)) fail("loss_total");
}

}  // namespace

TrainResult train(const TrainConfig& config, const Corpus& corpus, const EpochCallback& on_epoch_end) {
  config.validate();
  if (!corpus.complete_triples()) throw ContractError("training corpus must have complete P/V/L triples");
  ModelConfig mcfg = model_config_for(config, corpus);
  mcfg.init_seed = derive_seed(config.seed, "init");
  TrainResult result{CopeModel(mcfg), {}};
  CopeModel& model = result.model;
  for (const Sample& s : corpus.samples()) model.check_compatible(s);

  const ClassIndex classes(corpus);
  const int steps_per_epoch = resolve_steps_per_epoch(config, corpus);
  const long total_steps = static_cast<long>(config.epochs) * steps_per_epoch;
  const long warmup_steps = static_cast<long>(config.warmup_epochs) * steps_per_epoch;
  Rng sampler_rng(derive_seed(config.seed, "sampler"));
  AdamW optimizer(model.parameters(), config.weight_decay);
  nn::GradientSet grads(model.parameters());

  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int s = 0; s < steps_per_epoch; ++s) {
      ++step;
      const TripleBatch batch =
          config.sampling == SamplingStrategy::balanced
              ? sample_batch_balanced(corpus, classes, config.products_per_batch, config.instances_per_product,
                                      sampler_rng)
              : sample_batch_random(corpus, classes, config.batch_size(), sampler_rng);
      grads.set_zero();
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.loss = batch_loss(model, batch, config.loss, &grads);
      check_finite(rec.loss, step);
      rec.grad_norm = std::sqrt(grads.squared_norm());
      if (config.grad_clip > 0 && rec.grad_norm > config.grad_clip) grads.scale(config.grad_clip / rec.grad_norm);
      for (std::size_t g = 0; g < 3; ++g) rec.lr[g] = lr_at(step, total_steps, warmup_steps, config.max_lr[g]);
      optimizer.step(model.parameters(), grads, rec.lr);
      result.log.push_back(rec);
    }
    if (on_epoch_end) on_epoch_end(epoch, model);
  }
  return result;
}

}  // namespace cope
