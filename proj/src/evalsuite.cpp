#include "cope/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cope/binary_io.hpp"
#include "cope/errors.hpp"
#include "cope/rng.hpp"

namespace cope {

using nlohmann::ordered_json;

EmbeddingTable::EmbeddingTable(Matrix rows, std::vector<EmbeddingRowMeta> meta)
    : rows_(std::move(rows)), meta_(std::move(meta)) {
  if (static_cast<std::size_t>(rows_.rows()) != meta_.size()) {
    throw ShapeError("embedding table: " + std::to_string(rows_.rows()) + " rows but " +
                     std::to_string(meta_.size()) + " metadata entries");
  }
  for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
    const double n = rows_.row(i).norm();
    if (!(n > 0) || !std::isfinite(n)) {
      throw NumericError("embedding row " + std::to_string(i) + " (" + meta_[i].sample_id + ") has norm " +
                         std::to_string(n));
    }
    rows_.row(i) /= n;
    // Keep values representable in the on-disk float32 format.
    for (Eigen::Index j = 0; j < rows_.cols(); ++j) rows_(i, j) = static_cast<float>(rows_(i, j));
  }
}

EmbeddingTable EmbeddingTable::from_stored(Matrix rows, std::vector<EmbeddingRowMeta> meta) {
  if (static_cast<std::size_t>(rows.rows()) != meta.size()) {
    throw ShapeError("embedding table: " + std::to_string(rows.rows()) + " rows but " + std::to_string(meta.size()) +
                     " metadata entries");
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!(std::abs(n - 1.0) <= 1e-5)) {
      throw NumericError("stored embedding row " + std::to_string(i) + " (" + meta[i].sample_id + ") has norm " +
                         std::to_string(n));
    }
  }
  EmbeddingTable out;
  out.rows_ = std::move(rows);
  out.meta_ = std::move(meta);
  return out;
}

EmbeddingTable EmbeddingTable::select(Domain domain) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < meta_.size(); ++i) {
    if (meta_[i].domain == domain) keep.push_back(static_cast<Eigen::Index>(i));
  }
  EmbeddingTable out;
  out.rows_.resize(static_cast<Eigen::Index>(keep.size()), rows_.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.rows_.row(static_cast<Eigen::Index>(k)) = rows_.row(keep[k]);
    out.meta_.push_back(meta_[keep[k]]);
  }
  return out;
}

bool EmbeddingTable::has_domain(Domain domain) const {
  return std::any_of(meta_.begin(), meta_.end(), [&](const auto& m) { return m.domain == domain; });
}

EmbeddingTable export_embeddings(const CopeModel& model, const Corpus& corpus) {
  const auto& samples = corpus.samples();
  Matrix rows(static_cast<Eigen::Index>(samples.size()), model.config().embed_dim());
  std::vector<EmbeddingRowMeta> meta;
  meta.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    model.check_compatible(s);
    rows.row(static_cast<Eigen::Index>(i)) = model.represent(s).transpose();
    meta.push_back({s.sample_id, s.product_id, s.domain});
  }
  return EmbeddingTable(std::move(rows), std::move(meta));
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".jsonl";
  return p;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open embedding file for writing: " + path.string());
    binary::write_magic(out, "COPE");
    binary::write_le<std::uint16_t>(out, 1);
    binary::write_le<std::uint16_t>(out, 0);
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
    binary::write_le<std::uint64_t>(out, table.size());
    const Matrix& r = table.rows();
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      for (Eigen::Index j = 0; j < r.cols(); ++j) binary::write_le<float>(out, static_cast<float>(r(i, j)));
    }
    if (!out) throw IoError("failed writing embedding file: " + path.string());
  }
  const auto side = sidecar_path(path);
  std::ofstream out(side, std::ios::binary);
  if (!out) throw IoError("cannot open sidecar for writing: " + side.string());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& m = table.meta()[i];
    ordered_json j;
    j["row"] = i;
    j["sample_id"] = m.sample_id;
    j["product_id"] = m.product_id;
    j["domain"] = std::string(to_string(m.domain));
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing sidecar: " + side.string());
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + path.string());
  binary::expect_magic(in, "COPE", "embedding file");
  const auto version = binary::read_le<std::uint16_t>(in);
  if (version != 1) throw ParseError("embedding file: unsupported version " + std::to_string(version));
  const auto flags = binary::read_le<std::uint16_t>(in);
  if (flags != 0) throw ParseError("embedding file: unsupported flags " + std::to_string(flags));
  const auto dim = binary::read_le<std::uint32_t>(in);
  const auto count = binary::read_le<std::uint64_t>(in);
  if (dim == 0) throw ParseError("embedding file: dim is 0");
  Matrix rows(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = binary::read_le<float>(in);
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw ParseError("embedding file: trailing bytes");

  const auto side = sidecar_path(path);
  std::ifstream sin(side, std::ios::binary);
  if (!sin) throw IoError("cannot open sidecar: " + side.string());
  std::vector<EmbeddingRowMeta> meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(sin, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("row").get<std::size_t>() != meta.size()) {
        throw ParseError("sidecar line " + std::to_string(line_no) + ": rows out of order");
      }
      meta.push_back({j.at("sample_id").get<std::string>(), j.at("product_id").get<std::string>(),
                      parse_domain(j.at("domain").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("sidecar line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (meta.size() != count) {
    throw IntegrityError("sidecar has " + std::to_string(meta.size()) + " entries but embedding file has " +
                         std::to_string(count) + " rows");
  }
  return EmbeddingTable::from_stored(std::move(rows), std::move(meta));
}

namespace {

// Ascending position of each gallery row in sample_id order.
std::vector<std::size_t> id_order(const EmbeddingTable& t) {
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return t.meta()[a].sample_id < t.meta()[b].sample_id; });
  std::vector<std::size_t> rank(t.size());
  for (std::size_t r = 0; r < idx.size(); ++r) rank[idx[r]] = r;
  return rank;
}

struct Ranker {
  const EmbeddingTable& gallery;
  std::vector<std::size_t> id_rank;

  explicit Ranker(const EmbeddingTable& g) : gallery(g), id_rank(id_order(g)) {}

  // First `top` indices in rank order.
  std::vector<std::size_t> rank(const RowVector& q, std::size_t top) const {
    const Vector sims = gallery.rows() * q.transpose();
    std::vector<std::size_t> idx(gallery.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto before = [&](std::size_t a, std::size_t b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return id_rank[a] < id_rank[b];
    };
    top = std::min(top, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(), before);
    idx.resize(top);
    return idx;
  }
};

void check_dims(const RowVector& q, const EmbeddingTable& g) {
  if (q.size() != g.dim()) {
    throw ShapeError("query dim " + std::to_string(q.size()) + " vs gallery dim " + std::to_string(g.dim()));
  }
}

void check_cutoffs(const std::vector<int>& v, const char* what) {
  if (v.empty()) throw ContractError(std::string(what) + " list is empty");
  for (int k : v) {
    if (k < 1) throw ContractError(std::string(what) + " must be positive, got " + std::to_string(k));
  }
}

double percent(double x) { return 100.0 * x; }

}  // namespace

std::vector<std::size_t> rank_gallery(const RowVector& query, const EmbeddingTable& gallery) {
  check_dims(query, gallery);
  return Ranker(gallery).rank(query, gallery.size());
}

RetrievalReport evaluate_retrieval(const EmbeddingTable& queries, const EmbeddingTable& gallery,
                                   const std::vector<int>& ks, const std::vector<int>& cutoffs) {
  if (queries.size() == 0) throw ContractError("retrieval: empty query set");
  if (gallery.size() == 0) throw ContractError("retrieval: empty gallery");
  if (queries.dim() != gallery.dim()) {
    throw ShapeError("retrieval: query dim " + std::to_string(queries.dim()) + " vs gallery dim " +
                     std::to_string(gallery.dim()));
  }
  check_cutoffs(ks, "K");
  check_cutoffs(cutoffs, "cutoff");

  RetrievalReport rep;
  rep.query_domain = queries.meta().front().domain;
  rep.gallery_domain = gallery.meta().front().domain;
  rep.ks = ks;
  rep.cutoffs = cutoffs;
  rep.recall.assign(ks.size(), 0.0);
  rep.map.assign(cutoffs.size(), 0.0);
  rep.mar.assign(cutoffs.size(), 0.0);
  rep.precision.assign(cutoffs.size(), 0.0);

  std::map<std::string, std::size_t, std::less<>> per_product;
  for (const auto& m : gallery.meta()) ++per_product[m.product_id];

  const Ranker ranker(gallery);
  const std::size_t depth =
      static_cast<std::size_t>(std::max(*std::max_element(ks.begin(), ks.end()),
                                        *std::max_element(cutoffs.begin(), cutoffs.end())));

  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& qm = queries.meta()[qi];
    std::size_t relevant = 0;
    bool self_in_gallery = false;
    if (auto it = per_product.find(qm.product_id); it != per_product.end()) relevant = it->second;
    for (const auto& gm : gallery.meta()) {
      if (gm.sample_id == qm.sample_id) {
        self_in_gallery = true;
        if (gm.product_id == qm.product_id) --relevant;
      }
    }
    if (relevant == 0) {
      ++rep.excluded_queries;
      continue;
    }
    ++rep.queries;

    // Rank one extra slot so that dropping the query itself keeps the depth.
    auto ranked = ranker.rank(queries.rows().row(static_cast<Eigen::Index>(qi)), depth + (self_in_gallery ? 1 : 0));
    std::vector<bool> hit;
    hit.reserve(ranked.size());
    for (auto g : ranked) {
      const auto& gm = gallery.meta()[g];
      if (gm.sample_id == qm.sample_id) continue;
      hit.push_back(gm.product_id == qm.product_id);
    }
    if (hit.size() > depth) hit.resize(depth);

    std::size_t first = hit.size();
    for (std::size_t r = 0; r < hit.size(); ++r) {
      if (hit[r]) {
        first = r;
        break;
      }
    }
    for (std::size_t k = 0; k < ks.size(); ++k) {
      if (first < static_cast<std::size_t>(ks[k])) rep.recall[k] += 1.0;
    }
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      const std::size_t cut = static_cast<std::size_t>(cutoffs[c]);
      std::size_t hits = 0;
      double ap = 0;
      for (std::size_t r = 0; r < std::min(cut, hit.size()); ++r) {
        if (hit[r]) {
          ++hits;
          ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
      }
      rep.map[c] += ap / static_cast<double>(std::min(relevant, cut));
      rep.mar[c] += static_cast<double>(hits) / static_cast<double>(relevant);
      rep.precision[c] += static_cast<double>(hits) / static_cast<double>(cut);
    }
  }

  if (rep.queries > 0) {
    const double n = static_cast<double>(rep.queries);
    for (auto* v : {&rep.recall, &rep.map, &rep.mar, &rep.precision}) {
      for (double& x : *v) x /= n;
    }
  }
  rep.recall_mean = recall_mean(rep.recall);
  return rep;
}

RetrievalReport retrieval_eval(const EmbeddingTable& table, Domain query_domain, Domain gallery_domain,
                               const std::vector<int>& ks, const std::vector<int>& cutoffs) {
  if (query_domain == gallery_domain) {
    throw ContractError("retrieval direction " + std::string(to_string(query_domain)) + "->" +
                        std::string(to_string(gallery_domain)) + " is not cross-domain");
  }
  if (!table.has_domain(query_domain)) {
    throw ContractError("retrieval: no " + std::string(to_string(query_domain)) + " rows");
  }
  if (!table.has_domain(gallery_domain)) {
    throw ContractError("retrieval: no " + std::string(to_string(gallery_domain)) + " rows");
  }
  return evaluate_retrieval(table.select(query_domain), table.select(gallery_domain), ks, cutoffs);
}

const std::array<std::pair<Domain, Domain>, 6>& cross_domain_directions() {
  static const std::array<std::pair<Domain, Domain>, 6> dirs{{{Domain::P, Domain::V},
                                                              {Domain::V, Domain::P},
                                                              {Domain::P, Domain::L},
                                                              {Domain::L, Domain::P},
                                                              {Domain::V, Domain::L},
                                                              {Domain::L, Domain::V}}};
  return dirs;
}

std::vector<RetrievalReport> retrieval_eval_all(const EmbeddingTable& table, const std::vector<int>& ks,
                                                const std::vector<int>& cutoffs) {
  std::vector<RetrievalReport> out;
  for (const auto& [q, g] : cross_domain_directions()) out.push_back(retrieval_eval(table, q, g, ks, cutoffs));
  return out;
}

double recall_mean(std::span<const double> recalls) {
  if (recalls.empty()) return 0.0;
  return std::accumulate(recalls.begin(), recalls.end(), 0.0) / static_cast<double>(recalls.size());
}

ordered_json RetrievalReport::to_json() const {
  ordered_json j;
  j["query_domain"] = std::string(to_string(query_domain));
  j["gallery_domain"] = std::string(to_string(gallery_domain));
  j["queries"] = queries;
  j["excluded_queries"] = excluded_queries;
  for (std::size_t i = 0; i < ks.size(); ++i) j["R@" + std::to_string(ks[i])] = percent(recall[i]);
  j["R@mean"] = percent(recall_mean);
  for (std::size_t i = 0; i < cutoffs.size(); ++i) j["mAP@" + std::to_string(cutoffs[i])] = percent(map[i]);
  for (std::size_t i = 0; i < cutoffs.size(); ++i) j["mAR@" + std::to_string(cutoffs[i])] = percent(mar[i]);
  for (std::size_t i = 0; i < cutoffs.size(); ++i) j["Prec@" + std::to_string(cutoffs[i])] = percent(precision[i]);
  return j;
}

std::string RetrievalReport::to_table() const {
  std::ostringstream os;
  os << to_string(query_domain) << "->" << to_string(gallery_domain) << "  queries=" << queries
     << " excluded=" << excluded_queries << '\n';
  char buf[64];
  const ordered_json j = to_json();
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number_float()) continue;
    std::snprintf(buf, sizeof buf, "  %-10s %8.3f\n", key.c_str(), value.get<double>());
    os << buf;
  }
  return os.str();
}

ordered_json FewShotReport::to_json() const {
  ordered_json j;
  j["anchor_domain"] = std::string(to_string(anchor_domain));
  j["query_domain"] = std::string(to_string(query_domain));
  j["queries"] = queries;
  j["repeats"] = accuracy_per_repeat.size();
  j["accuracy_mean"] = percent(mean);
  j["accuracy_sd"] = percent(stddev);
  ordered_json per = ordered_json::array();
  for (double a : accuracy_per_repeat) per.push_back(percent(a));
  j["accuracy_per_repeat"] = per;
  return j;
}

FewShotReport few_shot_eval(const EmbeddingTable& table, Domain anchor_domain, Domain query_domain,
                            std::uint64_t seed, int repeats) {
  if (anchor_domain == query_domain) throw ContractError("few-shot: anchor and query domains must differ");
  if (repeats < 1) throw ContractError("few-shot: repeats must be at least 1");
  const EmbeddingTable anchors = table.select(anchor_domain);
  const EmbeddingTable queries = table.select(query_domain);
  if (queries.size() == 0) throw ContractError("few-shot: no query rows");

  // Candidate anchors per product, in sample_id order.
  std::map<std::string, std::vector<std::size_t>, std::less<>> pool;
  for (std::size_t i = 0; i < anchors.size(); ++i) pool[anchors.meta()[i].product_id].push_back(i);
  for (auto& [_, v] : pool) {
    std::sort(v.begin(), v.end(),
              [&](auto a, auto b) { return anchors.meta()[a].sample_id < anchors.meta()[b].sample_id; });
  }
  std::set<std::string> missing;
  for (const auto& m : queries.meta()) {
    if (!pool.count(m.product_id)) missing.insert(m.product_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& p : missing) list += (list.empty() ? "" : ", ") + p;
    throw ContractError("few-shot: products without " + std::string(to_string(anchor_domain)) + " anchors: " + list);
  }

  FewShotReport rep;
  rep.anchor_domain = anchor_domain;
  rep.query_domain = query_domain;
  rep.queries = queries.size();
  for (int r = 0; r < repeats; ++r) {
    Rng rng(derive_seed(seed, "anchors", static_cast<std::uint64_t>(r)));
    std::vector<std::size_t> chosen;
    for (const auto& [_, v] : pool) chosen.push_back(v[rng.below(v.size())]);
    std::sort(chosen.begin(), chosen.end(),
              [&](auto a, auto b) { return anchors.meta()[a].sample_id < anchors.meta()[b].sample_id; });
    Matrix a(static_cast<Eigen::Index>(chosen.size()), anchors.dim());
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      a.row(static_cast<Eigen::Index>(k)) = anchors.rows().row(static_cast<Eigen::Index>(chosen[k]));
    }
    std::size_t correct = 0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const Vector sims = a * queries.rows().row(static_cast<Eigen::Index>(qi)).transpose();
      // chosen is in sample_id order, so the first maximum wins ties.
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < sims.size(); ++k) {
        if (sims[k] > sims[best]) best = k;
      }
      if (anchors.meta()[chosen[static_cast<std::size_t>(best)]].product_id == queries.meta()[qi].product_id) {
        ++correct;
      }
    }
    rep.accuracy_per_repeat.push_back(static_cast<double>(correct) / static_cast<double>(queries.size()));
  }
  const double n = static_cast<double>(repeats);
  rep.mean = std::accumulate(rep.accuracy_per_repeat.begin(), rep.accuracy_per_repeat.end(), 0.0) / n;
  if (repeats > 1) {
    double ss = 0;
    for (double a : rep.accuracy_per_repeat) ss += (a - rep.mean) * (a - rep.mean);
    rep.stddev = std::sqrt(ss / (n - 1));
  }
  return rep;
}

std::vector<CandidatePair> bootstrap_filter(std::span<const CandidatePair> pairs, double threshold) {
  std::vector<CandidatePair> kept;
  for (const auto& p : pairs) {
    if (!(p.score >= 0.0 && p.score <= 1.0)) {
      throw ContractError(p.sample_id + ": score " + std::to_string(p.score) + " outside [0, 1]");
    }
    if (p.score > threshold) kept.push_back(p);
  }
  return kept;
}

std::vector<AggregatedProduct> aggregate_triples(std::span<const CandidatePair> pairs) {
  std::map<std::string, AggregatedProduct, std::less<>> by_product;
  for (const auto& p : pairs) {
    auto& agg = by_product[p.product_id];
    agg.product_id = p.product_id;
    agg.samples[domain_index(p.domain)].push_back(p.sample_id);
  }
  std::vector<AggregatedProduct> out;
  for (auto& [_, agg] : by_product) {
    if (std::all_of(agg.samples.begin(), agg.samples.end(), [](const auto& v) { return !v.empty(); })) {
      for (auto& v : agg.samples) std::sort(v.begin(), v.end());
      out.push_back(std::move(agg));
    }
  }
  return out;
}

std::vector<CandidatePair> candidate_pairs(const EmbeddingTable& table) {
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_product;
  for (std::size_t i = 0; i < table.size(); ++i) by_product[table.meta()[i].product_id].push_back(i);
  std::vector<CandidatePair> out;
  out.reserve(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& m = table.meta()[i];
    double best = 0;
    for (auto j : by_product[m.product_id]) {
      if (table.meta()[j].domain == m.domain) continue;
      const double c = table.rows().row(static_cast<Eigen::Index>(i)).dot(table.rows().row(static_cast<Eigen::Index>(j)));
      best = std::max(best, c);
    }
    out.push_back({m.sample_id, m.product_id, m.domain, std::clamp(best, 0.0, 1.0)});
  }
  return out;
}

Matrix project_2d(const EmbeddingTable& table) {
  if (table.size() == 0) throw ContractError("projection: empty table");
  const Matrix& x = table.rows();
  const RowVector mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(1, x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = cov.rows();
  Matrix basis(d, 2);
  basis.setZero();
  for (int c = 0; c < 2 && c < d; ++c) {
    Vector v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.col(c) = v;
  }
  return centered * basis;
}

}  // namespace cope
