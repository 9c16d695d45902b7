#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cope/datamodel.hpp"
#include "cope/model.hpp"
#include "json.hpp"

namespace cope {

struct EmbeddingRowMeta {
  std::string sample_id;
  std::string product_id;
  Domain domain = Domain::P;

  friend bool operator==(const EmbeddingRowMeta&, const EmbeddingRowMeta&) = default;
};

// Unit-norm rows with per-row metadata. Rows hold float32-representable
// values so that the table survives a file round trip exactly.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  // Normalizes every row; throws NumericError on a zero row.
  EmbeddingTable(Matrix rows, std::vector<EmbeddingRowMeta> meta);
  // Rows as stored on disk: already unit norm and float32, kept as they are.
  // Throws NumericError when a row is not unit norm to float precision.
  static EmbeddingTable from_stored(Matrix rows, std::vector<EmbeddingRowMeta> meta);

  const Matrix& rows() const { return rows_; }
  const std::vector<EmbeddingRowMeta>& meta() const { return meta_; }
  std::size_t size() const { return meta_.size(); }
  int dim() const { return static_cast<int>(rows_.cols()); }

  EmbeddingTable select(Domain domain) const;
  bool has_domain(Domain domain) const;

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  Matrix rows_;
  std::vector<EmbeddingRowMeta> meta_;
};

// One row per sample, in corpus order: E_fus for P, E_vis for V and L.
EmbeddingTable export_embeddings(const CopeModel& model, const Corpus& corpus);

// Binary file: "COPE", u16 version=1, u16 flags=0, u32 dim, u64 count, then
// count*dim little-endian float32. Sidecar at path + ".jsonl" with one
// {row, sample_id, product_id, domain} object per line.
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_embeddings(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

// Gallery indices by descending cosine similarity, ties by ascending sample_id.
std::vector<std::size_t> rank_gallery(const RowVector& query, const EmbeddingTable& gallery);

inline const std::vector<int> kDefaultRecallKs{1, 5, 10, 20, 50};
inline const std::vector<int> kDefaultCutoffs{10, 50, 100};

struct RetrievalReport {
  Domain query_domain = Domain::P;
  Domain gallery_domain = Domain::V;
  std::vector<int> ks;
  std::vector<double> recall;  // R@K, fraction of queries with a hit in the top K
  double recall_mean = 0;      // arithmetic mean of recall over ks
  std::vector<int> cutoffs;
  std::vector<double> map;        // mAP@cutoff
  std::vector<double> mar;        // mean recall of all relevant items @cutoff
  std::vector<double> precision;  // Prec@cutoff
  std::size_t queries = 0;        // evaluated queries
  std::size_t excluded_queries = 0;  // queries whose product is absent from the gallery

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

// Queries and gallery given explicitly; gallery rows with the query's own
// sample_id are skipped. Throws ContractError on an empty side.
RetrievalReport evaluate_retrieval(const EmbeddingTable& queries, const EmbeddingTable& gallery,
                                   const std::vector<int>& ks = kDefaultRecallKs,
                                   const std::vector<int>& cutoffs = kDefaultCutoffs);

// One of the six cross-domain directions over a mixed-domain table.
RetrievalReport retrieval_eval(const EmbeddingTable& table, Domain query_domain, Domain gallery_domain,
                               const std::vector<int>& ks = kDefaultRecallKs,
                               const std::vector<int>& cutoffs = kDefaultCutoffs);

// P->V, V->P, P->L, L->P, V->L, L->V.
const std::array<std::pair<Domain, Domain>, 6>& cross_domain_directions();

std::vector<RetrievalReport> retrieval_eval_all(const EmbeddingTable& table,
                                                const std::vector<int>& ks = kDefaultRecallKs,
                                                const std::vector<int>& cutoffs = kDefaultCutoffs);

// Arithmetic mean of a list of R@K values.
double recall_mean(std::span<const double> recalls);

struct FewShotReport {
  Domain anchor_domain = Domain::V;
  Domain query_domain = Domain::P;
  std::vector<double> accuracy_per_repeat;
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for a single repeat
  std::size_t queries = 0;

  nlohmann::ordered_json to_json() const;
};

// Per repeat, one anchor per product is drawn from anchor_domain; each query
// takes the product of its nearest anchor (ties by ascending sample_id).
FewShotReport few_shot_eval(const EmbeddingTable& table, Domain anchor_domain, Domain query_domain,
                            std::uint64_t seed, int repeats = 5);

struct CandidatePair {
  std::string sample_id;
  std::string product_id;
  Domain domain = Domain::P;
  double score = 0;
};

// Keeps pairs with score strictly above threshold. Scores must lie in [0, 1].
std::vector<CandidatePair> bootstrap_filter(std::span<const CandidatePair> pairs, double threshold = 0.7);

struct AggregatedProduct {
  std::string product_id;
  std::array<std::vector<std::string>, 3> samples;  // sample_ids per domain
};

// Groups by product and keeps those with at least one sample in P, V and L.
std::vector<AggregatedProduct> aggregate_triples(std::span<const CandidatePair> pairs);

// Matching score of each sample against its own product: the best cosine to
// any other-domain sample of the product, clamped to [0, 1].
std::vector<CandidatePair> candidate_pairs(const EmbeddingTable& table);

// Projection onto the two leading principal directions (sign fixed so the
// largest-magnitude loading is positive).
Matrix project_2d(const EmbeddingTable& table);

}  // namespace cope
