#include "cope/losses.hpp"

#include <cmath>
#include <limits>

#include "cope/errors.hpp"

namespace cope {

void LossWeights::validate() const {
  for (std::size_t n = 0; n < alpha.size(); ++n) {
    if (!std::isfinite(alpha[n]) || alpha[n] < 0) {
      throw ConfigError("alpha[" + std::to_string(n + 1) + "] must be finite and >= 0");
    }
  }
  if (!std::isfinite(beta) || beta < 0) throw ConfigError("beta must be finite and >= 0");
  if (!std::isfinite(tau) || tau <= 0) throw ConfigError("tau must be finite and > 0");
}

std::string_view to_string(Representation r) {
  switch (r) {
    case Representation::fus_p:
      return "E_fus^P";
    case Representation::vis_p:
      return "E_vis^P";
    case Representation::txt_p:
      return "E_txt^P";
    case Representation::vis_v:
      return "E_vis^V";
    case Representation::vis_l:
      return "E_vis^L";
  }
  return "?";
}

Representation representation_for(Domain domain, RepresentationKind kind) {
  switch (kind) {
    case RepresentationKind::vision:
      return domain == Domain::P ? Representation::vis_p
                                 : (domain == Domain::V ? Representation::vis_v : Representation::vis_l);
    case RepresentationKind::text:
      if (domain == Domain::P) return Representation::txt_p;
      break;
    case RepresentationKind::fusion:
      if (domain == Domain::P) return Representation::fus_p;
      break;
  }
  throw ContractError("domain " + std::string(to_string(domain)) + " has no " +
                      (kind == RepresentationKind::text ? "text" : "fusion") + " representation");
}

const std::array<SimilarityChannel, 7>& similarity_channels() {
  using R = Representation;
  static const std::array<SimilarityChannel, 7> channels{{
      {1, R::fus_p, R::vis_v},
      {2, R::fus_p, R::vis_l},
      {3, R::vis_v, R::vis_l},
      {4, R::vis_p, R::vis_v},
      {5, R::txt_p, R::vis_v},
      {6, R::vis_p, R::vis_l},
      {7, R::txt_p, R::vis_l},
  }};
  return channels;
}

const SimilarityChannel& find_channel(Representation query, Representation key) {
  for (const auto& c : similarity_channels()) {
    if (c.query == query && c.key == key) return c;
  }
  throw ContractError("no similarity channel pairs " + std::string(to_string(query)) + " with " +
                      std::string(to_string(key)));
}

namespace {

double log_sum_exp(const Eigen::Ref<const RowVector>& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

Matrix normalize_rows(const Matrix& m, Vector& norms) {
  norms = m.rowwise().norm();
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (norms[i] == 0) throw NumericError("cannot normalize a zero embedding");
    out.row(i) /= norms[i];
  }
  return out;
}

// d(x/|x|) applied row-wise.
Matrix normalize_rows_backward(const Matrix& normalized, const Vector& norms, const Matrix& dnormalized) {
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    const double radial = normalized.row(i).dot(dnormalized.row(i));
    out.row(i) = (dnormalized.row(i) - radial * normalized.row(i)) / norms[i];
  }
  return out;
}

void require_rows(const BatchEmbeddings& batch, Representation r) {
  if (static_cast<std::size_t>(batch.rep(r).rows()) != batch.size() || batch.size() == 0) {
    throw ContractError("batch is missing representation " + std::string(to_string(r)));
  }
}

double cross_entropy(const Vector& scores, int label, Vector* dscores) {
  if (label < 0 || label >= scores.size()) {
    throw ContractError("label " + std::to_string(label) + " outside [0, " + std::to_string(scores.size()) + ")");
  }
  const RowVector row = scores.transpose();
  const double lse = log_sum_exp(row);
  if (dscores) {
    *dscores = (scores.array() - lse).exp().matrix();
    (*dscores)[label] -= 1.0;
  }
  return lse - scores[label];
}

}  // namespace

double info_nce(const Vector& query, std::span<const Vector> keys, const std::vector<bool>& positive, double tau) {
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  if (keys.size() != positive.size()) throw ContractError("positive mask length must match key count");
  RowVector logits(static_cast<Eigen::Index>(keys.size()));
  const double qn = query.norm();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    logits[static_cast<Eigen::Index>(i)] = query.dot(keys[i]) / (qn * keys[i].norm()) / tau;
    positives += positive[i] ? 1 : 0;
  }
  if (positives == 0) throw ContractError("info_nce needs at least one positive key");
  const double lse = log_sum_exp(logits);
  double loss = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (positive[i]) loss += lse - logits[static_cast<Eigen::Index>(i)];
  }
  return loss / static_cast<double>(positives);
}

ChannelValue contrastive_pair_loss(const Matrix& queries, const Matrix& keys, const std::vector<int>& labels,
                                   double tau, bool with_gradients) {
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  const Eigen::Index n = queries.rows();
  if (n == 0 || keys.rows() != n || static_cast<Eigen::Index>(labels.size()) != n) {
    throw ContractError("contrastive pair loss needs matching, non-empty query and key batches");
  }
  Vector qnorm, knorm;
  const Matrix q = normalize_rows(queries, qnorm);
  const Matrix k = normalize_rows(keys, knorm);
  const Matrix logits = (q * k.transpose()) / tau;

  // dlogits accumulates (softmax - positive/|positives|) for both directions.
  Matrix dlogits = Matrix::Zero(n, n);
  double row_total = 0, col_total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lse_row = log_sum_exp(logits.row(i));
    const double lse_col = log_sum_exp(logits.col(i).transpose());
    int pos = 0;
    double row_sum = 0, col_sum = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        ++pos;
        row_sum += lse_row - logits(i, j);
        col_sum += lse_col - logits(j, i);
      }
    }
    row_total += row_sum / pos;
    col_total += col_sum / pos;
    if (with_gradients) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const bool is_pos = labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)];
        const double hit = is_pos ? 1.0 / pos : 0.0;
        dlogits(i, j) += (std::exp(logits(i, j) - lse_row) - hit) * 0.5 / static_cast<double>(n);
        dlogits(j, i) += (std::exp(logits(j, i) - lse_col) - hit) * 0.5 / static_cast<double>(n);
      }
    }
  }
  ChannelValue out;
  out.loss = 0.5 * (row_total + col_total) / static_cast<double>(n);
  if (with_gradients) {
    const Matrix dsim = dlogits / tau;
    out.dquery = normalize_rows_backward(q, qnorm, dsim * k);
    out.dkey = normalize_rows_backward(k, knorm, dsim.transpose() * q);
  }
  return out;
}

double channel_loss(const BatchEmbeddings& batch, const SimilarityChannel& channel, double tau) {
  require_rows(batch, channel.query);
  require_rows(batch, channel.key);
  return contrastive_pair_loss(batch.rep(channel.query), batch.rep(channel.key), batch.labels, tau, false).loss;
}

double cross_domain_loss(const BatchEmbeddings& batch, const LossWeights& weights) {
  weights.validate();
  double total = 0;
  for (const auto& c : similarity_channels()) {
    const double a = weights.alpha[static_cast<std::size_t>(c.index - 1)];
    if (a != 0) total += a * channel_loss(batch, c, weights.tau);
  }
  return total;
}

double classification_loss(const Vector& scores_p, const Vector& scores_v, const Vector& scores_l, int label) {
  return cross_entropy(scores_p, label, nullptr) + cross_entropy(scores_v, label, nullptr) +
         cross_entropy(scores_l, label, nullptr);
}

namespace {

LossResult evaluate(const BatchEmbeddings& batch, const LossWeights& weights, bool with_gradients) {
  weights.validate();
  const std::size_t n = batch.size();
  if (n == 0) throw ContractError("empty batch");
  LossResult result;
  if (with_gradients) {
    for (std::size_t r = 0; r < 5; ++r) result.gradients.reps[r] = Matrix::Zero(batch.reps[r].rows(), batch.reps[r].cols());
    result.gradients.labels = batch.labels;
  }
  auto& b = result.breakdown;
  for (const auto& c : similarity_channels()) {
    require_rows(batch, c.query);
    require_rows(batch, c.key);
    const double a = weights.alpha[static_cast<std::size_t>(c.index - 1)];
    const ChannelValue v =
        contrastive_pair_loss(batch.rep(c.query), batch.rep(c.key), batch.labels, weights.tau, with_gradients && a != 0);
    b.channels[static_cast<std::size_t>(c.index - 1)] = v.loss;
    b.cross_domain += a * v.loss;
    if (with_gradients && a != 0) {
      result.gradients.rep(c.query) += a * v.dquery;
      result.gradients.rep(c.key) += a * v.dkey;
    }
  }

  const Matrix* scores[3] = {&batch.scores_p, &batch.scores_v, &batch.scores_l};
  for (const Matrix* s : scores) {
    if (static_cast<std::size_t>(s->rows()) != n) throw ContractError("batch is missing classification scores");
  }
  Matrix* dscores[3] = {&result.gradients.scores_p, &result.gradients.scores_v, &result.gradients.scores_l};
  if (with_gradients) {
    for (int k = 0; k < 3; ++k) *dscores[k] = Matrix::Zero(scores[k]->rows(), scores[k]->cols());
  }
  double cls_sum = 0;
  const double item_scale = weights.beta / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      const auto row = static_cast<Eigen::Index>(i);
      Vector d;
      cls_sum += cross_entropy(scores[k]->row(row).transpose(), batch.labels[i], with_gradients ? &d : nullptr);
      if (with_gradients) dscores[k]->row(row) = item_scale * d.transpose();
    }
  }
  b.classification = cls_sum / static_cast<double>(n);
  b.total = b.cross_domain + weights.beta * b.classification;
  return result;
}

}  // namespace

LossBreakdown total_loss(const BatchEmbeddings& batch, const LossWeights& weights) {
  return evaluate(batch, weights, false).breakdown;
}

LossResult total_loss_with_gradients(const BatchEmbeddings& batch, const LossWeights& weights) {
  return evaluate(batch, weights, true);
}

}  // namespace cope
