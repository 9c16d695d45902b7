#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cope/losses.hpp"
#include "cope/model.hpp"
#include "cope/sampler.hpp"

namespace cope {

enum class SamplingStrategy : std::uint8_t { balanced, random };

struct TrainConfig {
  int epochs = 80;
  int warmup_epochs = 2;
  // Peak learning rate per parameter group (text encoder, visual encoder, other).
  std::array<double, 3> max_lr{5e-5, 5e-7, 5e-3};
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  SamplingStrategy sampling = SamplingStrategy::balanced;
  std::size_t products_per_batch = 28;
  std::size_t instances_per_product = 3;
  // Batch size for random sampling; 0 means products_per_batch * instances_per_product.
  std::size_t random_batch_size = 0;
  LossWeights loss;
  // 0 derives the count from the corpus: ceil(sum over products of the
  // largest per-domain sample count / batch size).
  int steps_per_epoch = 0;
  // Global gradient-norm clip; <= 0 disables clipping.
  double grad_clip = 1.0;
  // Held-out evaluation cadence in epochs for callers that pass an epoch
  // callback; 0 disables it.
  int eval_every_epochs = 0;
  ModelConfig model;

  std::size_t batch_size() const;
  void validate() const;
};

// Linear warmup to max_lr over warmup_steps, then half-cosine decay to zero.
double lr_at(long step, long total_steps, long warmup_steps, double max_lr);

class AdamW {
 public:
  AdamW(const nn::ParameterSet& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step(nn::ParameterSet& params, const nn::GradientSet& grads, const std::array<double, 3>& lr_by_group);

 private:
  nn::GradientSet m_, v_;
  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Forward pass over every item of the batch, loss, and (when grads is non-null)
// accumulated parameter gradients of the total loss.
LossBreakdown batch_loss(const CopeModel& model, const TripleBatch& batch, const LossWeights& weights,
                         nn::GradientSet* grads);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  LossBreakdown loss;
  std::array<double, 3> lr{};
  double grad_norm = 0;

  std::string to_json_line() const;
};

struct TrainResult {
  CopeModel model;
  std::vector<StepRecord> log;
};

using EpochCallback = std::function<void(int epoch, const CopeModel& model)>;

// Builds the model (classes from the corpus, image size from its frames),
// then runs epochs * steps_per_epoch AdamW steps. Throws NumericError naming
// the first non-finite loss term.
TrainResult train(const TrainConfig& config, const Corpus& corpus, const EpochCallback& on_epoch_end = {});

// Model configuration adapted to a corpus (class count, image size).
ModelConfig model_config_for(const TrainConfig& config, const Corpus& corpus);

int resolve_steps_per_epoch(const TrainConfig& config, const Corpus& corpus);

}  // namespace cope
