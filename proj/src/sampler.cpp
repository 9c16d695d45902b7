#include "cope/sampler.hpp"

#include <numeric>

#include "cope/errors.hpp"

namespace cope {

ClassIndex::ClassIndex(const Corpus& corpus) {
  for (const auto& [id, entry] : corpus.products()) {
    index_.emplace(id, static_cast<int>(products_.size()));
    products_.push_back(id);
  }
}

int ClassIndex::at(const std::string& product_id) const {
  auto it = index_.find(product_id);
  if (it == index_.end()) throw ContractError("product " + product_id + " has no class index");
  return it->second;
}

namespace {

void require_triples(const Corpus& corpus) {
  if (!corpus.complete_triples()) {
    throw ContractError("sampling needs a complete-triples corpus; incomplete products: " +
                        std::to_string(corpus.incomplete_products().size()));
  }
}

std::vector<const ProductEntry*> product_list(const Corpus& corpus, std::vector<const std::string*>& ids) {
  std::vector<const ProductEntry*> out;
  for (const auto& [id, entry] : corpus.products()) {
    out.push_back(&entry);
    ids.push_back(&id);
  }
  return out;
}

}  // namespace

TripleBatch sample_batch_random(const Corpus& corpus, const ClassIndex& classes, std::size_t n, Rng& rng) {
  require_triples(corpus);
  if (n < 2) throw ContractError("batch size must be >= 2");
  std::vector<const std::string*> ids;
  const auto products = product_list(corpus, ids);

  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  std::vector<std::size_t> order(products.size());
  while (chosen.size() < n) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: only as many draws as still needed.
    const std::size_t take = std::min(n - chosen.size(), order.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(order[i], order[i + rng.below(order.size() - i)]);
      chosen.push_back(order[i]);
    }
  }

  TripleBatch batch;
  const auto& samples = corpus.samples();
  for (std::size_t p : chosen) {
    const ProductEntry& e = *products[p];
    TripleItem item;
    item.page = &samples[e.by_domain[0][rng.below(e.by_domain[0].size())]];
    item.video = &samples[e.by_domain[1][rng.below(e.by_domain[1].size())]];
    item.live = &samples[e.by_domain[2][rng.below(e.by_domain[2].size())]];
    item.product_id = *ids[p];
    item.class_index = classes.at(item.product_id);
    batch.items.push_back(std::move(item));
  }
  return batch;
}

TripleBatch sample_batch_balanced(const Corpus& corpus, const ClassIndex& classes, std::size_t n_products,
                                  std::size_t instances, Rng& rng) {
  require_triples(corpus);
  if (n_products < 2) throw ContractError("balanced sampling needs P >= 2");
  if (instances < 1) throw ContractError("balanced sampling needs K >= 1");
  std::vector<const std::string*> ids;
  const auto products = product_list(corpus, ids);
  if (n_products > products.size()) {
    throw ContractError("P = " + std::to_string(n_products) + " exceeds the " + std::to_string(products.size()) +
                        " products in the corpus");
  }

  std::vector<std::size_t> order(products.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < n_products; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

  TripleBatch batch;
  const auto& samples = corpus.samples();
  for (std::size_t i = 0; i < n_products; ++i) {
    const std::size_t p = order[i];
    const ProductEntry& e = *products[p];
    std::array<std::vector<std::size_t>, 3> pools;
    for (std::size_t d = 0; d < 3; ++d) {
      pools[d] = e.by_domain[d];
      rng.shuffle(pools[d]);
    }
    for (std::size_t k = 0; k < instances; ++k) {
      TripleItem item;
      item.page = &samples[pools[0][k % pools[0].size()]];
      item.video = &samples[pools[1][k % pools[1].size()]];
      item.live = &samples[pools[2][k % pools[2].size()]];
      item.product_id = *ids[p];
      item.class_index = classes.at(item.product_id);
      batch.items.push_back(std::move(item));
    }
  }
  return batch;
}

}  // namespace cope
