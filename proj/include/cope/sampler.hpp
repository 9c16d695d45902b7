#pragma once

#include <map>
#include <string>
#include <vector>

#include "cope/datamodel.hpp"
#include "cope/rng.hpp"

namespace cope {

// product_id -> class index, assigned 0..C-1 in lexicographic product order.
class ClassIndex {
 public:
  ClassIndex() = default;
  explicit ClassIndex(const Corpus& corpus);

  int at(const std::string& product_id) const;
  const std::vector<std::string>& products() const { return products_; }
  int size() const { return static_cast<int>(products_.size()); }

 private:
  std::vector<std::string> products_;
  std::map<std::string, int, std::less<>> index_;
};

struct TripleItem {
  const Sample* page = nullptr;
  const Sample* video = nullptr;
  const Sample* live = nullptr;
  std::string product_id;
  int class_index = 0;
};

struct TripleBatch {
  std::vector<TripleItem> items;
  std::size_t size() const { return items.size(); }
};

// N items over distinct products when N <= product count (duplicates only
// once every product has been used); one uniformly drawn P/V/L sample each.
TripleBatch sample_batch_random(const Corpus& corpus, const ClassIndex& classes, std::size_t n, Rng& rng);

// P distinct products, K items each; within a product the K items use
// distinct samples per domain while the product has enough of them.
TripleBatch sample_batch_balanced(const Corpus& corpus, const ClassIndex& classes, std::size_t products,
                                  std::size_t instances, Rng& rng);

}  // namespace cope
