#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "cope/evalsuite.hpp"
#include "cope/model.hpp"
#include "cope/synthetic.hpp"

namespace cope::testing {

// Exhaustive reference for evaluate_retrieval: every similarity by explicit
// loops, a full sort of the gallery per query, metrics straight from the
// ranked relevance list. Same conventions: self excluded by sample_id,
// queries without relevant items excluded and counted.
RetrievalReport metric_oracle(const EmbeddingTable& queries, const EmbeddingTable& gallery,
                              const std::vector<int>& ks = kDefaultRecallKs,
                              const std::vector<int>& cutoffs = kDefaultCutoffs);

// Average precision at `cutoff` of one ranked relevance list holding
// `relevant` relevant items in total. Zero when nothing is relevant.
double average_precision(const std::vector<bool>& ranked_relevance, std::size_t relevant, std::size_t cutoff);

// Seeded table of `rows` random rows over `products` products, domains cycling P, V, L.
EmbeddingTable random_table(std::uint64_t seed, std::size_t rows, int dim, std::size_t products);

// d=8, two CCT blocks, up to two frames, 8x8 images with 4x4 patches.
ModelConfig tiny_model_config(int classes, std::uint64_t seed = 7);
SyntheticConfig tiny_corpus_config(std::uint32_t products, std::uint64_t seed = 11);

// Central-difference relative error between an analytic gradient and
// f(x + h e_i) - f(x - h e_i) / 2h over every entry of x:
// ||g - g_fd|| / max(||g||, ||g_fd||, tiny).
double fd_relative_error(Matrix& x, const Matrix& analytic, const std::function<double()>& f, double h = 1e-5);

struct GradientCheck {
  std::array<double, 3> group_error{};  // by nn::ParamGroup
  double worst_tensor_error = 0;
  std::string worst_tensor;
  std::size_t scalars = 0;
};

// Total loss of a d=8, N=2, T=2, C=5 model on a balanced batch, analytic
// gradients against central differences for every parameter. Parameters are
// jittered first so that zero-initialized branches carry gradient.
GradientCheck check_model_gradients(std::uint64_t seed = 1);

}  // namespace cope::testing
