#include <algorithm>
#include <numeric>

#include "doctest.h"

#include "cope/encoders.hpp"
#include "cope/errors.hpp"
#include "support/oracle.hpp"

using namespace cope;
using cope::testing::fd_relative_error;

namespace {

VisualEncoderConfig small_visual(bool exchange = true) {
  VisualEncoderConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.cct_blocks = 2;
  c.heads = 2;
  c.max_frames = 4;
  c.temporal_exchange = exchange;
  return c;
}

Frames random_frames(std::uint32_t t, std::uint32_t size, std::uint64_t seed) {
  Rng rng(seed);
  Frames f;
  f.frames = t;
  f.height = size;
  f.width = size;
  f.data.resize(std::size_t{t} * size * size * 3);
  for (float& v : f.data) v = float(rng.uniform());
  return f;
}

// Moves every parameter away from its initial value so that zero-initialized
// branches carry signal.
void jitter(nn::ParameterSet& p, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Matrix& m = p.value(i);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] += scale * rng.normal();
  }
}

void copy_shared(const nn::ParameterSet& from, nn::ParameterSet& to) {
  for (std::size_t i = 0; i < to.size(); ++i) {
    const auto id = from.find(to.name(i));
    REQUIRE(id.has_value());
    to.value(i) = from[*id];
  }
}

void zero_linear(nn::ParameterSet& p, const nn::Linear& l) {
  p[l.weight()].setZero();
  p[l.bias()].setZero();
}

}  // namespace

TEST_CASE("frame tokens: class token plus spatial table on a zero frame") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(), rng);
  zero_linear(p, enc.patch_embedding());
  Frames f = random_frames(1, 8, 2);
  std::fill(f.data.begin(), f.data.end(), 0.0f);
  const auto z = enc.embed_frame_tokens(p, f);
  REQUIRE(z.size() == 1);
  Matrix expected = p[enc.spatial_positions()];
  expected.row(0) += p[enc.class_token()];
  CHECK((z[0] - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("frame tokens: identical frames give identical tokens; shape is (M+1) x d") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoderConfig cfg = small_visual();
  cfg.image_size = 32;
  cfg.patch_size = 16;
  VisualEncoder enc(p, cfg, rng);
  Frames one = random_frames(1, 32, 3);
  Frames two = one;
  two.frames = 2;
  two.data.insert(two.data.end(), one.data.begin(), one.data.end());
  const auto z = enc.embed_frame_tokens(p, two);
  CHECK(z[0].rows() == 5);
  CHECK(z[0].cols() == 8);
  CHECK(z[0] == z[1]);
}

TEST_CASE("too many frames is a capacity error") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(), rng);
  CHECK_THROWS_AS(enc.encode(p, random_frames(5, 8, 4)), CapacityError);
  CHECK_THROWS_AS(enc.encode(p, random_frames(2, 16, 4)), ShapeError);
}

TEST_CASE("without temporal exchange frames are processed independently") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(false), rng);
  auto states = enc.embed_frame_tokens(p, random_frames(3, 8, 5));
  const auto base = enc.cct_block(p, states, 0);
  states[1].array() += 0.5;
  const auto moved = enc.cct_block(p, states, 0);
  CHECK(moved[0] == base[0]);
  CHECK(moved[2] == base[2]);
  CHECK_FALSE(moved[1] == base[1]);
}

TEST_CASE("with temporal exchange a frame's class token reaches the other frames") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(true), rng);
  jitter(p, 6);
  auto states = enc.embed_frame_tokens(p, random_frames(2, 8, 7));
  const auto base = enc.cct_block(p, states, 0);
  states[1](0, 0) += 0.5;
  const auto moved = enc.cct_block(p, states, 0);
  CHECK((moved[0].row(0) - base[0].row(0)).norm() > 1e-6);
}

TEST_CASE("exchange starts as a no-op") {
  nn::ParameterSet on, off;
  Rng r1(1), r2(1);
  VisualEncoder with(on, small_visual(true), r1);
  VisualEncoder without(off, small_visual(false), r2);
  copy_shared(on, off);
  const Frames f = random_frames(3, 8, 8);
  CHECK((with.encode(on, f) - without.encode(off, f)).norm() == 0.0);
}

TEST_CASE("single-frame input is unaffected by temporal exchange") {
  nn::ParameterSet on, off;
  Rng r1(1), r2(1);
  VisualEncoder with(on, small_visual(true), r1);
  VisualEncoder without(off, small_visual(false), r2);
  jitter(on, 9);
  copy_shared(on, off);
  const Frames f = random_frames(1, 8, 10);
  CHECK((with.encode(on, f) - without.encode(off, f)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("integration layer: zero residual branches leave token plus temporal code") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(), rng);
  jitter(p, 11);
  const auto& mit = enc.integration_block();
  zero_linear(p, mit.attention().output());
  zero_linear(p, mit.fc2());
  Matrix h(1, 8);
  h << 0.3, -0.1, 0.7, 0.0, 1.2, -0.5, 0.25, 0.9;
  const Vector z = enc.mit_aggregate(p, h);
  const RowVector expected = h.row(0) + p[enc.temporal_positions()].row(0);
  CHECK((z.transpose() - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("integration layer is order-free without temporal codes") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(), rng);
  jitter(p, 12);
  p[enc.temporal_positions()].setZero();
  Matrix h(4, 8);
  Rng data(13);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = data.normal();
  Matrix shuffled(4, 8);
  const int order[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) shuffled.row(i) = h.row(order[i]);
  CHECK((enc.mit_aggregate(p, h) - enc.mit_aggregate(p, shuffled)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("integration layer over identical tokens equals the single-token result") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(), rng);
  jitter(p, 14);
  p[enc.temporal_positions()].setZero();
  Matrix v(1, 8);
  v << 0.5, -0.2, 0.1, 0.9, -1.0, 0.3, 0.0, 0.4;
  const Matrix four = v.replicate(4, 1);
  CHECK((enc.mit_aggregate(p, four) - enc.mit_aggregate(p, v)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("video encoding: shape and determinism") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoder enc(p, small_visual(), rng);
  for (std::uint32_t t = 1; t <= 4; ++t) {
    const Frames f = random_frames(t, 8, 15 + t);
    const Vector a = enc.encode(p, f);
    CHECK(a.size() == 8);
    CHECK(a == enc.encode(p, f));
    VisualEncoder::Cache cache;
    CHECK(a == enc.forward(p, f, cache));
  }
}

TEST_CASE("video encoding gradients match central differences") {
  nn::ParameterSet p;
  Rng rng(1);
  VisualEncoderConfig cfg = small_visual();
  cfg.max_frames = 2;
  VisualEncoder enc(p, cfg, rng);
  jitter(p, 20);
  const Frames f = random_frames(2, 8, 21);
  VisualEncoder::Cache cache;
  enc.forward(p, f, cache);
  nn::GradientSet g(p);
  enc.backward(p, cache, Vector::Ones(8), g);
  auto probe = [&] { return enc.encode(p, f).sum(); };
  for (std::size_t i = 0; i < p.size(); ++i) {
    CAPTURE(p.name(i));
    CHECK(fd_relative_error(p.value(i), g.at(i), probe, 1e-6) <= 1e-5);
  }
}

TEST_CASE("text encoding: padding is invisible and determinism holds") {
  nn::ParameterSet p;
  Rng rng(1);
  TextEncoderConfig cfg;
  cfg.vocab_size = 32;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.max_len = 8;
  TextEncoder enc(p, cfg, rng);
  const std::vector<std::int32_t> tokens{5, 9, 17, 3};
  std::vector<std::int32_t> padded = tokens;
  padded.insert(padded.end(), {0, 0, 0});
  const Vector h = enc.encode(p, tokens);
  CHECK(h.size() == 8);
  CHECK(h == enc.encode(p, tokens));
  CHECK((h - enc.encode(p, padded)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(enc.encode(p, std::vector<std::int32_t>{3, 32}), VocabularyError);
  CHECK_THROWS_AS(enc.encode(p, std::vector<std::int32_t>(9, 4)), CapacityError);
}

TEST_CASE("text encoding gradients match central differences") {
  nn::ParameterSet p;
  Rng rng(1);
  TextEncoderConfig cfg;
  cfg.vocab_size = 16;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.max_len = 6;
  TextEncoder enc(p, cfg, rng);
  jitter(p, 22);
  const std::vector<std::int32_t> tokens{4, 7, 4, 11, 0};
  TextEncoder::Cache cache;
  enc.forward(p, tokens, cache);
  nn::GradientSet g(p);
  enc.backward(p, cache, Vector::Ones(8), g);
  auto probe = [&] { return enc.encode(p, tokens).sum(); };
  for (std::size_t i = 0; i < p.size(); ++i) {
    CAPTURE(p.name(i));
    CHECK(fd_relative_error(p.value(i), g.at(i), probe, 1e-6) <= 1e-5);
  }
  // one token-embedding row on its own
  const auto emb = enc.token_embedding();
  Matrix row = p[emb].row(7);
  const Matrix grad_row = g[emb].row(7);
  auto row_probe = [&] {
    p[emb].row(7) = row.row(0);
    return enc.encode(p, tokens).sum();
  };
  CHECK(fd_relative_error(row, grad_row, row_probe, 1e-6) <= 1e-5);
}
