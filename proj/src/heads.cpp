#include "cope/heads.hpp"

#include "cope/errors.hpp"

namespace cope {

namespace {

std::size_t map_slot(Domain domain, Modality modality) {
  if (modality == Modality::text) {
    if (domain != Domain::P) {
      throw UnsupportedModalityError("domain " + std::string(to_string(domain)) + " has no text modality");
    }
    return 1;
  }
  switch (domain) {
    case Domain::P:
      return 0;
    case Domain::V:
      return 2;
    case Domain::L:
      return 3;
  }
  return 0;
}

Matrix as_row(const Vector& v) { return v.transpose(); }

}  // namespace

ProjectionSet::ProjectionSet(nn::ParameterSet& params, int dim, Rng& rng) {
  const auto group = nn::ParamGroup::other;
  maps_[0] = nn::Linear(params, "proj.P.vision", dim, dim, group, rng);
  maps_[1] = nn::Linear(params, "proj.P.text", dim, dim, group, rng);
  maps_[2] = nn::Linear(params, "proj.V.vision", dim, dim, group, rng);
  maps_[3] = nn::Linear(params, "proj.L.vision", dim, dim, group, rng);
}

const nn::Linear& ProjectionSet::map(Domain domain, Modality modality) const {
  return maps_[map_slot(domain, modality)];
}

Vector ProjectionSet::project(const nn::ParameterSet& p, const Vector& x, Domain domain, Modality modality) const {
  return map(domain, modality).forward(p, as_row(x)).transpose();
}

Vector ProjectionSet::backward(const nn::ParameterSet& p, const Vector& x, const Vector& dy, Domain domain,
                               Modality modality, nn::GradientSet& g) const {
  return map(domain, modality).backward(p, as_row(x), as_row(dy), g).transpose();
}

FusionHead::FusionHead(nn::ParameterSet& params, int dim, int heads, Rng& rng) {
  attn_ = nn::MultiHeadAttention(params, "fusion.attn", dim, heads, nn::ParamGroup::other, rng);
  out_ = nn::Linear(params, "fusion.out", dim, dim, nn::ParamGroup::other, rng);
}

Vector FusionHead::fuse(const nn::ParameterSet& p, const Vector& visual, const Vector& text) const {
  Cache cache;
  return forward(p, visual, text, cache);
}

Vector FusionHead::forward(const nn::ParameterSet& p, const Vector& visual, const Vector& text, Cache& cache) const {
  Matrix pair(2, visual.size());
  pair.row(0) = visual.transpose();
  pair.row(1) = text.transpose();
  const Matrix attended = pair + attn_.forward(p, pair, cache.attn);
  cache.pooled = attended.colwise().mean().transpose();
  return out_.forward(p, as_row(cache.pooled)).transpose();
}

std::pair<Vector, Vector> FusionHead::backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dy,
                                               nn::GradientSet& g) const {
  const Matrix dpooled = out_.backward(p, as_row(cache.pooled), as_row(dy), g);
  Matrix dattended(2, dpooled.cols());
  dattended.row(0) = dpooled.row(0) * 0.5;
  dattended.row(1) = dpooled.row(0) * 0.5;
  const Matrix dpair = dattended + attn_.backward(p, cache.attn, dattended, g);
  return {dpair.row(0).transpose(), dpair.row(1).transpose()};
}

ClassifierHead::ClassifierHead(nn::ParameterSet& params, int dim, int hidden, int classes, Rng& rng)
    : classes_(classes) {
  if (classes < 1) throw ConfigError("classifier needs at least one class");
  fc1_ = nn::Linear(params, "classifier.fc1", dim, hidden, nn::ParamGroup::other, rng);
  fc2_ = nn::Linear(params, "classifier.fc2", hidden, classes, nn::ParamGroup::other, rng);
}

Vector ClassifierHead::classify(const nn::ParameterSet& p, const Vector& e) const {
  Cache cache;
  return forward(p, e, cache);
}

Vector ClassifierHead::forward(const nn::ParameterSet& p, const Vector& e, Cache& cache) const {
  cache.input = as_row(e);
  cache.hidden_pre = fc1_.forward(p, cache.input);
  cache.hidden_act = nn::gelu(cache.hidden_pre);
  return fc2_.forward(p, cache.hidden_act).transpose();
}

Vector ClassifierHead::backward(const nn::ParameterSet& p, const Cache& cache, const Vector& dscores,
                                nn::GradientSet& g) const {
  const Matrix dact = fc2_.backward(p, cache.hidden_act, as_row(dscores), g);
  const Matrix dpre = nn::gelu_backward(cache.hidden_pre, dact);
  return fc1_.backward(p, cache.input, dpre, g).transpose();
}

}  // namespace cope
