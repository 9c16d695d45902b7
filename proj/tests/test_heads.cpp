#include <cmath>

#include "doctest.h"

#include "cope/errors.hpp"
#include "cope/heads.hpp"
#include "support/oracle.hpp"

using namespace cope;

namespace {

Vector random_vector(int d, Rng& rng) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("projection: identity weights, zero input, unsupported text domains") {
  nn::ParameterSet p;
  Rng rng(1);
  ProjectionSet proj(p, 6, rng);
  Rng data(2);
  const Vector x = random_vector(6, data);
  const auto& lin = proj.map(Domain::V, Modality::vision);
  p[lin.weight()].setIdentity();
  p[lin.bias()].setZero();
  CHECK(proj.project(p, x, Domain::V, Modality::vision) == x);

  const auto& page_text = proj.map(Domain::P, Modality::text);
  const Vector b = p[page_text.bias()].row(0).transpose();
  CHECK(proj.project(p, Vector::Zero(6), Domain::P, Modality::text) == b);

  CHECK_THROWS_AS(proj.map(Domain::L, Modality::text), UnsupportedModalityError);
  CHECK_THROWS_AS(proj.project(p, x, Domain::V, Modality::text), UnsupportedModalityError);
}

TEST_CASE("projection maps are affine and not shared") {
  nn::ParameterSet p;
  Rng rng(3);
  ProjectionSet proj(p, 5, rng);
  Rng data(4);
  const Vector x = random_vector(5, data), y = random_vector(5, data);
  const double a = 0.7, c = -1.3;
  const auto& lin = proj.map(Domain::L, Modality::vision);
  const Vector b = p[lin.bias()].row(0).transpose();
  const Vector lhs = proj.project(p, a * x + c * y, Domain::L, Modality::vision);
  const Vector rhs = a * proj.project(p, x, Domain::L, Modality::vision) +
                     c * proj.project(p, y, Domain::L, Modality::vision) - (a + c - 1) * b;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);

  const std::pair<Domain, Modality> maps[4] = {
      {Domain::P, Modality::vision}, {Domain::P, Modality::text}, {Domain::V, Modality::vision},
      {Domain::L, Modality::vision}};
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      CHECK(proj.map(maps[i].first, maps[i].second).weight().index !=
            proj.map(maps[j].first, maps[j].second).weight().index);
    }
  }
}

TEST_CASE("fusion of two identical tokens") {
  nn::ParameterSet p;
  Rng rng(5);
  FusionHead head(p, 8, 2, rng);
  Rng data(6);
  const Vector v = random_vector(8, data);
  // one token attending to a copy of itself sees exactly what it would see alone
  nn::AttentionCache cache;
  const Matrix single = head.attention().forward(p, v.transpose(), cache);
  const RowVector pooled = v.transpose() + single.row(0);
  const auto& out = head.output();
  const RowVector expected = pooled * p[out.weight()].transpose() + p[out.bias()];
  CHECK((head.fuse(p, v, v).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("fusion with a silent attention branch is an affine map of the mean") {
  nn::ParameterSet p;
  Rng rng(7);
  FusionHead head(p, 8, 2, rng);
  p[head.attention().output().weight()].setZero();
  p[head.attention().output().bias()].setZero();
  Rng data(8);
  const Vector a = random_vector(8, data), b = random_vector(8, data);
  const auto& out = head.output();
  const RowVector mean = 0.5 * (a + b).transpose();
  const RowVector expected = mean * p[out.weight()].transpose() + p[out.bias()];
  CHECK((head.fuse(p, a, b).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("fusion is symmetric in its inputs") {
  nn::ParameterSet p;
  Rng rng(9);
  FusionHead head(p, 8, 2, rng);
  Rng data(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector a = random_vector(8, data), b = random_vector(8, data);
    CHECK((head.fuse(p, a, b) - head.fuse(p, b, a)).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("fusion gradients match central differences") {
  nn::ParameterSet p;
  Rng rng(11);
  FusionHead head(p, 8, 2, rng);
  Rng data(12);
  const Vector a = random_vector(8, data);
  Matrix t = random_vector(8, data).transpose();
  FusionHead::Cache cache;
  head.forward(p, a, t.row(0).transpose(), cache);
  nn::GradientSet g(p);
  const auto [dvis, dtxt] = head.backward(p, cache, Vector::Ones(8), g);
  auto probe = [&] { return head.fuse(p, a, t.row(0).transpose()).sum(); };
  CHECK(testing::fd_relative_error(t, dtxt.transpose(), probe, 1e-6) <= 1e-5);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CAPTURE(p.name(i));
    CHECK(testing::fd_relative_error(p.value(i), g.at(i), probe, 1e-6) <= 1e-5);
  }
}

TEST_CASE("classifier: shared across domains, degenerate and hand-set weights") {
  nn::ParameterSet p;
  Rng rng(13);
  ClassifierHead cls(p, 2, 2, 3, rng);
  const Vector e = Vector::Constant(2, 0.4);
  // the same vector scores identically whichever domain produced it
  CHECK(cls.classify(p, e) == cls.classify(p, e));

  p[cls.output_layer().weight()].setZero();
  const Vector b2 = p[cls.output_layer().bias()].row(0).transpose();
  CHECK(cls.classify(p, Vector::Constant(2, 3.0)) == b2);

  p[cls.hidden_layer().weight()] << 1.0, 0.0, 0.0, 1.0;
  p[cls.hidden_layer().bias()].setZero();
  p[cls.output_layer().weight()] << 1.0, 2.0, -1.0, 0.5, 0.0, 3.0;
  p[cls.output_layer().bias()] << 0.1, 0.2, 0.3;
  Vector x(2);
  x << 0.5, -1.5;
  const double h0 = gelu_ref(0.5), h1 = gelu_ref(-1.5);
  const Vector s = cls.classify(p, x);
  CHECK(s[0] == doctest::Approx(1.0 * h0 + 2.0 * h1 + 0.1).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(-1.0 * h0 + 0.5 * h1 + 0.2).epsilon(1e-14));
  CHECK(s[2] == doctest::Approx(0.0 * h0 + 3.0 * h1 + 0.3).epsilon(1e-14));
}

TEST_CASE("classifier gradients match central differences") {
  nn::ParameterSet p;
  Rng rng(14);
  ClassifierHead cls(p, 6, 6, 4, rng);
  Rng data(15);
  Matrix e = random_vector(6, data).transpose();
  const Vector w = random_vector(4, data);
  ClassifierHead::Cache cache;
  cls.forward(p, e.row(0).transpose(), cache);
  nn::GradientSet g(p);
  const Vector de = cls.backward(p, cache, w, g);
  auto probe = [&] { return cls.classify(p, e.row(0).transpose()).dot(w); };
  CHECK(testing::fd_relative_error(e, de.transpose(), probe, 1e-6) <= 1e-5);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(testing::fd_relative_error(p.value(i), g.at(i), probe, 1e-6) <= 1e-5);
  }
}
