#include <cmath>
#include <map>
#include <set>

#include "doctest.h"

#include "cope/errors.hpp"
#include "cope/sampler.hpp"
#include "cope/synthetic.hpp"

using namespace cope;

namespace {

Corpus corpus_of(std::uint32_t products, std::array<std::uint32_t, 3> counts = {2, 3, 3}) {
  SyntheticConfig cfg;
  cfg.n_products = products;
  cfg.per_domain_counts = counts;
  cfg.frames_video = 1;
  cfg.frames_live = 1;
  cfg.image_size = 8;
  cfg.seed = 3;
  return generate_synthetic_corpus(cfg);
}

std::vector<std::string> ids_of(const TripleBatch& b) {
  std::vector<std::string> out;
  for (const auto& it : b.items) {
    out.push_back(it.page->sample_id);
    out.push_back(it.video->sample_id);
    out.push_back(it.live->sample_id);
  }
  return out;
}

}  // namespace

TEST_CASE("class indices follow lexicographic product order") {
  const Corpus c = corpus_of(12);
  const ClassIndex idx(c);
  REQUIRE(idx.size() == 12);
  for (int i = 1; i < idx.size(); ++i) CHECK(idx.products()[i - 1] < idx.products()[i]);
  CHECK(idx.at(idx.products()[5]) == 5);
  CHECK_THROWS_AS(idx.at("nope"), ContractError);
}

TEST_CASE("random batches are seeded, aligned and distinct when possible") {
  const Corpus c = corpus_of(100, {1, 1, 1});
  const ClassIndex idx(c);
  Rng a(5), b(5);
  const TripleBatch x = sample_batch_random(c, idx, 4, a);
  const TripleBatch y = sample_batch_random(c, idx, 4, b);
  CHECK(ids_of(x) == ids_of(y));
  CHECK(x.size() == 4);
  std::set<std::string> products;
  for (const auto& it : x.items) {
    CHECK(it.page->product_id == it.product_id);
    CHECK(it.video->product_id == it.product_id);
    CHECK(it.live->product_id == it.product_id);
    CHECK(it.page->domain == Domain::P);
    CHECK(it.video->domain == Domain::V);
    CHECK(it.live->domain == Domain::L);
    CHECK(it.class_index == idx.at(it.product_id));
    products.insert(it.product_id);
  }
  CHECK(products.size() == 4);
}

TEST_CASE("random batches larger than the product count repeat products") {
  const Corpus c = corpus_of(3);
  const ClassIndex idx(c);
  Rng rng(6);
  const TripleBatch b = sample_batch_random(c, idx, 7, rng);
  CHECK(b.size() == 7);
  std::map<std::string, int> count;
  for (const auto& it : b.items) ++count[it.product_id];
  CHECK(count.size() == 3);
  for (const auto& [_, n] : count) CHECK(n >= 2);
}

TEST_CASE("random product frequencies are uniform") {
  const std::size_t products = 20, batches = 10000, n = 4;
  const Corpus c = corpus_of(products, {1, 1, 1});
  const ClassIndex idx(c);
  Rng rng(7);
  std::vector<double> count(products, 0.0);
  for (std::size_t i = 0; i < batches; ++i) {
    for (const auto& it : sample_batch_random(c, idx, n, rng).items) count[std::size_t(it.class_index)] += 1;
  }
  const double total = double(batches * n);
  const double p = 1.0 / double(products);
  const double expected = total * p;
  const double sigma = std::sqrt(total * p * (1 - p));
  double chi2 = 0;
  for (double k : count) {
    CHECK(std::abs(k - expected) <= 3 * sigma);
    chi2 += (k - expected) * (k - expected) / expected;
  }
  // 99.9th percentile of chi-square with 19 degrees of freedom
  CHECK(chi2 < 43.82);
}

TEST_CASE("balanced batches hold exactly P products with K instances") {
  const Corpus c = corpus_of(10);
  const ClassIndex idx(c);
  Rng rng(8);
  const TripleBatch b = sample_batch_balanced(c, idx, 4, 3, rng);
  CHECK(b.size() == 12);
  std::map<std::string, int> count;
  for (const auto& it : b.items) ++count[it.product_id];
  CHECK(count.size() == 4);
  for (const auto& [_, k] : count) CHECK(k == 3);

  Rng rng1(9);
  const TripleBatch one = sample_batch_balanced(c, idx, 5, 1, rng1);
  std::set<std::string> distinct;
  for (const auto& it : one.items) distinct.insert(it.product_id);
  CHECK(one.size() == 5);
  CHECK(distinct.size() == 5);
}

TEST_CASE("balanced instances use distinct samples while they last") {
  // three videos per product and K = 3: every video of the product appears once
  const Corpus c = corpus_of(6, {2, 3, 3});
  const ClassIndex idx(c);
  Rng rng(10);
  const TripleBatch b = sample_batch_balanced(c, idx, 3, 3, rng);
  std::map<std::string, std::set<std::string>> videos, lives, pages;
  for (const auto& it : b.items) {
    videos[it.product_id].insert(it.video->sample_id);
    lives[it.product_id].insert(it.live->sample_id);
    pages[it.product_id].insert(it.page->sample_id);
  }
  for (const auto& [pid, v] : videos) {
    CHECK(v.size() == 3);
    CHECK(lives[pid].size() == 3);
    CHECK(pages[pid].size() == 2);  // only two pages exist
  }
}

TEST_CASE("balanced sampling over 10,000 seeded draws never breaks the P x K shape") {
  const Corpus c = corpus_of(12);
  const ClassIndex idx(c);
  Rng rng(11);
  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const TripleBatch b = sample_batch_balanced(c, idx, 5, 3, rng);
    std::map<std::string, int> count;
    for (const auto& it : b.items) ++count[it.product_id];
    bool ok = b.size() == 15 && count.size() == 5;
    for (const auto& [_, k] : count) ok = ok && k == 3;
    violations += ok ? 0 : 1;
  }
  CHECK(violations == 0);
}

TEST_CASE("sampler contract errors") {
  const Corpus c = corpus_of(4);
  const ClassIndex idx(c);
  Rng rng(12);
  CHECK_THROWS_AS(sample_batch_balanced(c, idx, 5, 2, rng), ContractError);
  CHECK_THROWS_AS(sample_batch_balanced(c, idx, 1, 2, rng), ContractError);
  CHECK_THROWS_AS(sample_batch_random(c, idx, 1, rng), ContractError);

  // drop every live-stream sample of one product
  std::vector<Sample> partial;
  for (const Sample& s : c.samples()) {
    if (s.domain == Domain::L && s.product_id == c.products().begin()->first) continue;
    partial.push_back(s);
  }
  const Corpus broken(partial);
  CHECK_FALSE(broken.complete_triples());
  CHECK_THROWS_AS(sample_batch_random(broken, ClassIndex(broken), 2, rng), ContractError);
  CHECK_THROWS_AS(sample_batch_balanced(broken, ClassIndex(broken), 2, 1, rng), ContractError);
}
