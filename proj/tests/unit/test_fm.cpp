#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "drcvr/fm.hpp"
#include "drcvr/rng.hpp"

using namespace drcvr;

namespace {

FmModel tiny_model() {
  // 4 features, rank 2, hand-set parameters.
  FmModel m;
  m.num_features = 4;
  m.rank = 2;
  m.bias = 0.25;
  m.linear = {0.1, -0.2, 0.3, 0.05};
  m.factors = {0.5, -0.1, 0.2, 0.4, -0.3, 0.6, 0.7, 0.0};
  return m;
}

}  // namespace

TEST_CASE("score matches the hand-expanded formula") {
  FmModel m = tiny_model();
  int idx[2] = {0, 2};
  // bias + w0 + w2 + <v0, v2>: interactions of two active features reduce to
  // the plain dot product of their factor rows.
  double expect = 0.25 + 0.1 + 0.3 + (0.5 * -0.3 + -0.1 * 0.6);
  CHECK(m.score(idx, 2) == doctest::Approx(expect).epsilon(1e-15));

  // Single active feature: no interaction term at all.
  int one[1] = {1};
  CHECK(m.score(one, 1) == doctest::Approx(0.25 - 0.2).epsilon(1e-15));
}

TEST_CASE("grad_accum matches central finite differences") {
  FmModel m = FmModel::init(6, 3, 0.3, Rng(17));
  m.bias = 0.11;
  for (size_t i = 0; i < m.linear.size(); ++i) m.linear[i] = 0.05 * double(i) - 0.1;
  int idx[2] = {1, 4};

  FmGrad g;
  g.resize_like(size_t(m.num_features), m.rank);
  m.grad_accum(idx, 2, 1.0, g);

  const double h = 1e-6;
  auto fd = [&](double* param) {
    double saved = *param;
    *param = saved + h;
    double up = m.score(idx, 2);
    *param = saved - h;
    double dn = m.score(idx, 2);
    *param = saved;
    return (up - dn) / (2 * h);
  };
  CHECK(g.bias == doctest::Approx(fd(&m.bias)).epsilon(1e-6));
  for (size_t i = 0; i < m.linear.size(); ++i)
    CHECK(g.linear[i] == doctest::Approx(fd(&m.linear[i])).epsilon(1e-6));
  for (size_t i = 0; i < m.factors.size(); ++i)
    CHECK(g.factors[i] == doctest::Approx(fd(&m.factors[i])).epsilon(1e-6));
}

TEST_CASE("grad_accum scales with upstream and accumulates") {
  FmModel m = FmModel::init(5, 2, 0.2, Rng(3));
  int idx[2] = {0, 3};
  FmGrad a, b;
  a.resize_like(size_t(m.num_features), m.rank);
  b.resize_like(size_t(m.num_features), m.rank);
  m.grad_accum(idx, 2, 2.5, a);
  m.grad_accum(idx, 2, 1.0, b);
  m.grad_accum(idx, 2, 1.5, b);  // 1.0 + 1.5 == 2.5
  CHECK(a.bias == doctest::Approx(b.bias).epsilon(1e-15));
  for (size_t i = 0; i < a.factors.size(); ++i)
    CHECK(a.factors[i] == doctest::Approx(b.factors[i]).epsilon(1e-13));
}

TEST_CASE("grad_dot equals the inner product with an accumulated gradient") {
  FmModel m = FmModel::init(6, 3, 0.25, Rng(8));
  int idx[2] = {2, 5};
  FmGrad dir;
  dir.resize_like(size_t(m.num_features), m.rank);
  Rng r = Rng(9).split("dir");
  dir.bias = r.next_gaussian();
  for (auto& v : dir.linear) v = r.next_gaussian();
  for (auto& v : dir.factors) v = r.next_gaussian();

  FmGrad g;
  g.resize_like(size_t(m.num_features), m.rank);
  m.grad_accum(idx, 2, 1.0, g);
  double dot = g.bias * dir.bias;
  for (size_t i = 0; i < g.linear.size(); ++i) dot += g.linear[i] * dir.linear[i];
  for (size_t i = 0; i < g.factors.size(); ++i) dot += g.factors[i] * dir.factors[i];
  CHECK(m.grad_dot(idx, 2, dir) == doctest::Approx(dot).epsilon(1e-12));
}

TEST_CASE("axpy is an exact first-order step for the score") {
  FmModel m = FmModel::init(4, 2, 0.2, Rng(21));
  int idx[2] = {1, 2};
  FmGrad g;
  g.resize_like(size_t(m.num_features), m.rank);
  m.grad_accum(idx, 2, 1.0, g);
  double before = m.score(idx, 2);
  double predicted_delta = -0.01 * m.grad_dot(idx, 2, g);
  m.axpy(-0.01, g);
  double after = m.score(idx, 2);
  // Linear + bias parts are exact; the factor part is quadratic, so second
  // order in the step size.
  CHECK(after - before == doctest::Approx(predicted_delta).epsilon(1e-3));
}

TEST_CASE("init shapes, zero bias and linear, gaussian factors") {
  FmModel m = FmModel::init(7, 4, 0.1, Rng(2));
  CHECK(m.num_features == 7);
  CHECK(m.rank == 4);
  CHECK(m.bias == 0.0);
  CHECK(m.linear.size() == 7);
  CHECK(m.factors.size() == 28);
  for (double v : m.linear) CHECK(v == 0.0);
  CHECK(m.num_params() == 1 + 7 + 28);
  CHECK_THROWS_AS(FmModel::init(0, 4, 0.1, Rng(2)), std::invalid_argument);
}

TEST_CASE("sigmoid and softplus are stable at extreme inputs") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(softplus(800.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(-800.0) == doctest::Approx(0.0));
}

TEST_CASE("feature layout is user one-hot followed by item one-hot") {
  FeatureSpace fs{10, 20};
  CHECK(fs.num_features() == 30);
  int out[2];
  fs.active(3, 7, out);
  CHECK(out[0] == 3);
  CHECK(out[1] == 17);
}
