#pragma once

#include <cstdint>

#include "cope/datamodel.hpp"
#include "cope/encoders.hpp"
#include "cope/heads.hpp"
#include "cope/nn.hpp"

namespace cope {

struct ModelConfig {
  VisualEncoderConfig visual;
  TextEncoderConfig text;
  int num_classes = 1;
  // Classifier hidden width; 0 means embed_dim.
  int classifier_hidden = 0;
  std::uint64_t init_seed = 0;

  int embed_dim() const { return visual.embed_dim; }
  void validate() const;
};

// The five per-item representations, before L2 normalization.
struct TripleRepresentations {
  Vector fus_p, vis_p, txt_p, vis_v, vis_l;
  Vector scores_p, scores_v, scores_l;
};

struct TripleGradients {
  Vector fus_p, vis_p, txt_p, vis_v, vis_l;
  Vector scores_p, scores_v, scores_l;
};

// Shared visual and text encoders, per-domain projections, product-page
// fusion and a shared classifier. Copyable; copies own their parameters.
class CopeModel {
 public:
  struct TripleCache {
    VisualEncoder::Cache page_visual, video_visual, live_visual;
    TextEncoder::Cache page_text;
    Vector z_page, h_text, z_video, z_live;
    FusionHead::Cache fusion;
    ClassifierHead::Cache cls_p, cls_v, cls_l;
  };

  explicit CopeModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  const VisualEncoder& visual() const { return visual_; }
  const TextEncoder& text() const { return text_; }
  const ProjectionSet& projections() const { return projections_; }
  const FusionHead& fusion() const { return fusion_; }
  const ClassifierHead& classifier() const { return classifier_; }

  // Final retrieval representation (unnormalized): E_fus for P, E_vis for V/L.
  Vector represent(const Sample& sample) const;

  TripleRepresentations forward_triple(const Sample& page, const Sample& video, const Sample& live,
                                       TripleCache& cache) const;
  void backward_triple(const TripleCache& cache, const TripleRepresentations& reps, const TripleGradients& grads,
                       nn::GradientSet& g) const;

  // Throws CompatibilityError when a sample cannot be encoded by this model.
  void check_compatible(const Sample& sample) const;

 private:
  ModelConfig cfg_;
  nn::ParameterSet params_;
  VisualEncoder visual_;
  TextEncoder text_;
  ProjectionSet projections_;
  FusionHead fusion_;
  ClassifierHead classifier_;
};

}  // namespace cope
