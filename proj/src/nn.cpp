#include "cope/nn.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "cope/errors.hpp"

namespace cope::nn {

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::text_encoder:
      return "text_encoder";
    case ParamGroup::visual_encoder:
      return "visual_encoder";
    case ParamGroup::other:
      return "other";
  }
  return "?";
}

ParamId ParameterSet::add(std::string name, Eigen::Index rows, Eigen::Index cols, ParamGroup group, bool decay) {
  if (find(name)) throw ContractError("duplicate parameter name: " + name);
  entries_.push_back(Entry{std::move(name), Matrix::Zero(rows, cols), group, decay});
  return ParamId{entries_.size() - 1};
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return ParamId{i};
  }
  return std::nullopt;
}

GradientSet::GradientSet(const ParameterSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void GradientSet::set_zero() {
  for (auto& g : grads_) g.setZero();
}

void GradientSet::accumulate(const GradientSet& other) {
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
}

void GradientSet::scale(double factor) {
  for (auto& g : grads_) g *= factor;
}

double GradientSet::squared_norm() const {
  double s = 0;
  for (const auto& g : grads_) s += g.squaredNorm();
  return s;
}

void init_normal(Matrix& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
}

Linear::Linear(ParameterSet& params, const std::string& name, Eigen::Index in, Eigen::Index out, ParamGroup group,
               Rng& rng, double init_std) {
  weight_ = params.add(name + ".weight", out, in, group, true);
  bias_ = params.add(name + ".bias", 1, out, group, false);
  const double stddev = init_std < 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : init_std;
  if (stddev > 0) init_normal(params[weight_], rng, stddev);
}

Matrix Linear::forward(const ParameterSet& p, const Matrix& x) const {
  Matrix y = x * p[weight_].transpose();
  y.rowwise() += p[bias_].row(0);
  return y;
}

Matrix Linear::backward(const ParameterSet& p, const Matrix& x, const Matrix& dy, GradientSet& g) const {
  g[weight_].noalias() += dy.transpose() * x;
  g[bias_].row(0) += dy.colwise().sum();
  return dy * p[weight_];
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, Eigen::Index dim, ParamGroup group) {
  gain_ = params.add(name + ".gain", 1, dim, group, false);
  shift_ = params.add(name + ".shift", 1, dim, group, false);
  params[gain_].setOnes();
}

Matrix LayerNorm::forward(const ParameterSet& p, const Matrix& x, LayerNormCache& cache) const {
  const auto n = static_cast<double>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    cache.inv_std[r] = inv;
    cache.xhat.row(r) = centered * inv;
  }
  Matrix y = cache.xhat.array().rowwise() * p[gain_].row(0).array();
  y.rowwise() += p[shift_].row(0);
  return y;
}

Matrix LayerNorm::backward(const ParameterSet& p, const LayerNormCache& cache, const Matrix& dy,
                           GradientSet& g) const {
  g[gain_].row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  g[shift_].row(0) += dy.colwise().sum();
  const auto n = static_cast<double>(dy.cols());
  const Matrix dxhat = dy.array().rowwise() * p[gain_].row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double sum = dxhat.row(r).sum();
    const double dot = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = (cache.inv_std[r] / n) * (n * dxhat.row(r).array() - sum - cache.xhat.row(r).array() * dot).matrix();
  }
  return dx;
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const Matrix slope = x.unaryExpr([&](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
  return dy.cwiseProduct(slope);
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, Eigen::Index dim, int heads,
                                       ParamGroup group, Rng& rng, bool zero_output)
    : dim_(dim), heads_(heads) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError(name + ": embedding dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  qkv_ = Linear(params, name + ".qkv", dim, 3 * dim, group, rng);
  out_ = Linear(params, name + ".out", dim, dim, group, rng, zero_output ? 0.0 : -1.0);
}

Matrix MultiHeadAttention::forward(const ParameterSet& p, const Matrix& x, AttentionCache& cache,
                                   const AttentionMask& mask) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index head_dim = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (mask.key_valid && static_cast<Eigen::Index>(mask.key_valid->size()) != n) {
    throw ShapeError("attention key mask length does not match the sequence");
  }
  cache.x = x;
  cache.qkv = qkv_.forward(p, x);
  cache.probs.resize(static_cast<std::size_t>(heads_));
  cache.context.resize(n, dim_);

  auto admissible = [&](Eigen::Index i, Eigen::Index j) {
    if (mask.exclude_self && i == j) return false;
    return !mask.key_valid || (*mask.key_valid)[static_cast<std::size_t>(j)] != 0;
  };

  for (int h = 0; h < heads_; ++h) {
    const auto q = cache.qkv.middleCols(h * head_dim, head_dim);
    const auto k = cache.qkv.middleCols(dim_ + h * head_dim, head_dim);
    const auto v = cache.qkv.middleCols(2 * dim_ + h * head_dim, head_dim);
    Matrix scores = (q * k.transpose()) * scale;
    Matrix& probs = cache.probs[static_cast<std::size_t>(h)];
    probs.setZero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (admissible(i, j)) row_max = std::max(row_max, scores(i, j));
      }
      if (!std::isfinite(row_max)) continue;
      double total = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (admissible(i, j)) {
          probs(i, j) = std::exp(scores(i, j) - row_max);
          total += probs(i, j);
        }
      }
      probs.row(i) /= total;
    }
    cache.context.middleCols(h * head_dim, head_dim).noalias() = probs * v;
  }
  return out_.forward(p, cache.context);
}

Matrix MultiHeadAttention::backward(const ParameterSet& p, const AttentionCache& cache, const Matrix& dy,
                                    GradientSet& g) const {
  const Eigen::Index head_dim = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Matrix dcontext = out_.backward(p, cache.context, dy, g);
  Matrix dqkv(cache.qkv.rows(), cache.qkv.cols());
  for (int h = 0; h < heads_; ++h) {
    const auto q = cache.qkv.middleCols(h * head_dim, head_dim);
    const auto k = cache.qkv.middleCols(dim_ + h * head_dim, head_dim);
    const auto v = cache.qkv.middleCols(2 * dim_ + h * head_dim, head_dim);
    const Matrix& probs = cache.probs[static_cast<std::size_t>(h)];
    const auto dctx = dcontext.middleCols(h * head_dim, head_dim);

    const Matrix dprobs = dctx * v.transpose();
    dqkv.middleCols(2 * dim_ + h * head_dim, head_dim).noalias() = probs.transpose() * dctx;
    const Eigen::VectorXd row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    const Matrix dscores = (probs.array() * (dprobs.colwise() - row_dot).array()).matrix() * scale;
    dqkv.middleCols(h * head_dim, head_dim).noalias() = dscores * k;
    dqkv.middleCols(dim_ + h * head_dim, head_dim).noalias() = dscores.transpose() * q;
  }
  return qkv_.backward(p, cache.x, dqkv, g);
}

TransformerBlock::TransformerBlock(ParameterSet& params, const std::string& name, Eigen::Index dim, int heads,
                                   int mlp_ratio, ParamGroup group, Rng& rng) {
  ln1_ = LayerNorm(params, name + ".ln1", dim, group);
  attn_ = MultiHeadAttention(params, name + ".attn", dim, heads, group, rng);
  ln2_ = LayerNorm(params, name + ".ln2", dim, group);
  fc1_ = Linear(params, name + ".fc1", dim, dim * mlp_ratio, group, rng);
  fc2_ = Linear(params, name + ".fc2", dim * mlp_ratio, dim, group, rng);
}

Matrix TransformerBlock::forward(const ParameterSet& p, const Matrix& x, TransformerBlockCache& cache,
                                 const AttentionMask& mask) const {
  cache.ln1_out = ln1_.forward(p, x, cache.ln1);
  Matrix mid = x + attn_.forward(p, cache.ln1_out, cache.attn, mask);
  cache.ln2_out = ln2_.forward(p, mid, cache.ln2);
  cache.hidden_pre = fc1_.forward(p, cache.ln2_out);
  cache.hidden_act = gelu(cache.hidden_pre);
  mid += fc2_.forward(p, cache.hidden_act);
  return mid;
}

Matrix TransformerBlock::backward(const ParameterSet& p, const TransformerBlockCache& cache, const Matrix& dy,
                                  GradientSet& g) const {
  const Matrix dact = fc2_.backward(p, cache.hidden_act, dy, g);
  const Matrix dpre = gelu_backward(cache.hidden_pre, dact);
  const Matrix dln2 = fc1_.backward(p, cache.ln2_out, dpre, g);
  Matrix dmid = dy + ln2_.backward(p, cache.ln2, dln2, g);
  const Matrix dln1 = attn_.backward(p, cache.attn, dmid, g);
  dmid += ln1_.backward(p, cache.ln1, dln1, g);
  return dmid;
}

}  // namespace cope::nn
