#pragma once

#include <array>

#include "cope/datamodel.hpp"
#include "cope/nn.hpp"

namespace cope {

enum class Modality : std::uint8_t { vision, text };

// Four non-shared affine maps: (P, vision), (P, text), (V, vision), (L, vision).
class ProjectionSet {
 public:
  ProjectionSet() = default;
  ProjectionSet(nn::ParameterSet& params, int dim, Rng& rng);

  // Throws UnsupportedModalityError for text on V or L.
  const nn::Linear& map(Domain domain, Modality modality) const;

  Vector project(const nn::ParameterSet& p, const Vector& x, Domain domain, Modality modality) const;
  // Returns dL/dx and accumulates the map's gradients.
  Vector backward(const nn::ParameterSet& p, const Vector& x, const Vector& dy, Domain domain, Modality modality,
                  nn::GradientSet& g) const;

 private:
  std::array<nn::Linear, 4> maps_;
};

// Self-attention over the unordered pair [visual; text] with a residual,
// mean of the two tokens, then an affine map. No position encodings, so the
// result is symmetric in its two inputs.
class FusionHead {
 public:
  struct Cache {
    nn::AttentionCache attn;
    Vector pooled;
  };

  FusionHead() = default;
  FusionHead(nn::ParameterSet& params, int dim, int heads, Rng& rng);

  Vector fuse(const nn::ParameterSet& p, const Vector& visual, const Vector& text) const;
  Vector forward(const nn::ParameterSet& p, const Vector& visual, const Vector& text, Cache& cache) const;
  // Returns {dL/dvisual, dL/dtext}.
  std::pair<Vector, Vector> backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dy,
                                     nn::GradientSet& g) const;

  const nn::MultiHeadAttention& attention() const { return attn_; }
  const nn::Linear& output() const { return out_; }

 private:
  nn::MultiHeadAttention attn_;
  nn::Linear out_;
};

// Two-layer MLP (dim -> hidden -> classes, GELU between) shared by all domains.
class ClassifierHead {
 public:
  struct Cache {
    Matrix input;
    Matrix hidden_pre;
    Matrix hidden_act;
  };

  ClassifierHead() = default;
  ClassifierHead(nn::ParameterSet& params, int dim, int hidden, int classes, Rng& rng);

  Vector classify(const nn::ParameterSet& p, const Vector& e) const;
  Vector forward(const nn::ParameterSet& p, const Vector& e, Cache& cache) const;
  Vector backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dscores, nn::GradientSet& g) const;

  const nn::Linear& hidden_layer() const { return fc1_; }
  const nn::Linear& output_layer() const { return fc2_; }
  int classes() const { return classes_; }

 private:
  nn::Linear fc1_, fc2_;
  int classes_ = 0;
};

}  // namespace cope
