#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cope/datamodel.hpp"
#include "cope/rng.hpp"

namespace cope::nn {

// Learning-rate groups: the two shared encoders and everything else.
enum class ParamGroup : std::uint8_t { text_encoder = 0, visual_encoder = 1, other = 2 };

std::string_view to_string(ParamGroup g);

struct ParamId {
  std::size_t index = 0;
};

// Owns every trainable tensor of a model, in registration order.
class ParameterSet {
 public:
  ParamId add(std::string name, Eigen::Index rows, Eigen::Index cols, ParamGroup group, bool decay);

  Matrix& operator[](ParamId id) { return entries_[id.index].value; }
  const Matrix& operator[](ParamId id) const { return entries_[id.index].value; }
  Matrix& value(std::size_t i) { return entries_[i].value; }
  const Matrix& value(std::size_t i) const { return entries_[i].value; }

  const std::string& name(std::size_t i) const { return entries_[i].name; }
  ParamGroup group(std::size_t i) const { return entries_[i].group; }
  bool decay(std::size_t i) const { return entries_[i].decay; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::optional<ParamId> find(std::string_view name) const;

 private:
  struct Entry {
    std::string name;
    Matrix value;
    ParamGroup group;
    bool decay;
  };
  std::vector<Entry> entries_;
};

// Gradient buffers shaped like a ParameterSet.
class GradientSet {
 public:
  GradientSet() = default;
  explicit GradientSet(const ParameterSet& params);

  Matrix& operator[](ParamId id) { return grads_[id.index]; }
  const Matrix& operator[](ParamId id) const { return grads_[id.index]; }
  Matrix& at(std::size_t i) { return grads_[i]; }
  const Matrix& at(std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void set_zero();
  void accumulate(const GradientSet& other);
  void scale(double factor);
  double squared_norm() const;

 private:
  std::vector<Matrix> grads_;
};

void init_normal(Matrix& m, Rng& rng, double stddev);

// y = x W^T + b with W stored out x in and b stored 1 x out.
class Linear {
 public:
  Linear() = default;
  // init_std < 0 selects 1/sqrt(in); init_std == 0 zero-initializes.
  Linear(ParameterSet& params, const std::string& name, Eigen::Index in, Eigen::Index out, ParamGroup group,
         Rng& rng, double init_std = -1.0);

  Matrix forward(const ParameterSet& p, const Matrix& x) const;
  // Accumulates weight/bias gradients and returns dL/dx.
  Matrix backward(const ParameterSet& p, const Matrix& x, const Matrix& dy, GradientSet& g) const;

  ParamId weight() const { return weight_; }
  ParamId bias() const { return bias_; }

 private:
  ParamId weight_, bias_;
};

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, Eigen::Index dim, ParamGroup group);

  Matrix forward(const ParameterSet& p, const Matrix& x, LayerNormCache& cache) const;
  Matrix backward(const ParameterSet& p, const LayerNormCache& cache, const Matrix& dy, GradientSet& g) const;

 private:
  ParamId gain_, shift_;
};

// Exact (erf) GELU.
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

struct AttentionMask {
  // Keys with a zero entry are ignored. Null means every key is valid.
  const std::vector<std::uint8_t>* key_valid = nullptr;
  // A token never attends to itself; a row with no admissible key yields a
  // zero context.
  bool exclude_self = false;
};

struct AttentionCache {
  Matrix x;
  Matrix qkv;
  std::vector<Matrix> probs;
  Matrix context;
};

// Multi-head scaled dot-product self-attention with a fused q/k/v projection.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, Eigen::Index dim, int heads, ParamGroup group,
                     Rng& rng, bool zero_output = false);

  Matrix forward(const ParameterSet& p, const Matrix& x, AttentionCache& cache, const AttentionMask& mask = {}) const;
  Matrix backward(const ParameterSet& p, const AttentionCache& cache, const Matrix& dy, GradientSet& g) const;

  const Linear& qkv() const { return qkv_; }
  const Linear& output() const { return out_; }

 private:
  Eigen::Index dim_ = 0;
  int heads_ = 1;
  Linear qkv_, out_;
};

struct TransformerBlockCache {
  LayerNormCache ln1;
  Matrix ln1_out;
  AttentionCache attn;
  LayerNormCache ln2;
  Matrix ln2_out;
  Matrix hidden_pre;
  Matrix hidden_act;
};

// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(.)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterSet& params, const std::string& name, Eigen::Index dim, int heads, int mlp_ratio,
                   ParamGroup group, Rng& rng);

  Matrix forward(const ParameterSet& p, const Matrix& x, TransformerBlockCache& cache,
                 const AttentionMask& mask = {}) const;
  Matrix backward(const ParameterSet& p, const TransformerBlockCache& cache, const Matrix& dy, GradientSet& g) const;

  const MultiHeadAttention& attention() const { return attn_; }
  const Linear& fc2() const { return fc2_; }

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  Linear fc1_, fc2_;
};

}  // namespace cope::nn
