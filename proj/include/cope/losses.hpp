#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "cope/datamodel.hpp"

namespace cope {

struct LossWeights {
  std::array<double, 7> alpha{1, 1, 1, 1, 1, 1, 1};
  double beta = 1.0;
  double tau = 0.07;

  void validate() const;
};

// Per-item representations that take part in the contrastive channels.
enum class Representation : std::uint8_t { fus_p = 0, vis_p, txt_p, vis_v, vis_l };
enum class RepresentationKind : std::uint8_t { vision, text, fusion };

std::string_view to_string(Representation r);
// Throws ContractError for combinations the model does not produce
// (text or fusion outside the product-page domain).
Representation representation_for(Domain domain, RepresentationKind kind);

struct SimilarityChannel {
  int index;  // 1..7
  Representation query;
  Representation key;
};

// The seven query/key pairings of the cross-domain objective, in order.
const std::array<SimilarityChannel, 7>& similarity_channels();
// Throws ContractError when (query, key) is not one of the seven channels.
const SimilarityChannel& find_channel(Representation query, Representation key);

// Row i of every matrix belongs to batch item i. Items sharing a label are
// positives for one another.
struct BatchEmbeddings {
  std::array<Matrix, 5> reps;
  Matrix scores_p, scores_v, scores_l;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  const Matrix& rep(Representation r) const { return reps[static_cast<std::size_t>(r)]; }
  Matrix& rep(Representation r) { return reps[static_cast<std::size_t>(r)]; }
};

// Mean over positives of -log softmax_k(cos(q, k) / tau), with every key in
// the denominator. Inputs need not be normalized.
double info_nce(const Vector& query, std::span<const Vector> keys, const std::vector<bool>& positive, double tau);

struct ChannelValue {
  double loss = 0;
  Matrix dquery;  // dL/d(unnormalized query rows)
  Matrix dkey;
};

// Symmetrized contrastive loss between two N x d representation matrices:
// the average of the query->key and key->query directions, each the mean of
// per-row info_nce values.
ChannelValue contrastive_pair_loss(const Matrix& queries, const Matrix& keys, const std::vector<int>& labels,
                                   double tau, bool with_gradients);

double channel_loss(const BatchEmbeddings& batch, const SimilarityChannel& channel, double tau);

double cross_domain_loss(const BatchEmbeddings& batch, const LossWeights& weights);

// Sum of the three per-domain softmax cross-entropies for one item.
double classification_loss(const Vector& scores_p, const Vector& scores_v, const Vector& scores_l, int label);

struct LossBreakdown {
  std::array<double, 7> channels{};
  double cross_domain = 0;
  double classification = 0;  // averaged over batch items
  double total = 0;
};

struct LossResult {
  LossBreakdown breakdown;
  BatchEmbeddings gradients;  // same layout as the input batch
};

LossBreakdown total_loss(const BatchEmbeddings& batch, const LossWeights& weights);
LossResult total_loss_with_gradients(const BatchEmbeddings& batch, const LossWeights& weights);

}  // namespace cope
