// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "loradyn/error.hpp"
#include "loradyn/optim.hpp"

using namespace loradyn;

TEST_CASE("adam first step is the sign of the gradient times lr") {
  Matrix p(1, 1, 0.0);
  AdamState s;
  adam_step(p, Matrix(1, 1, 0.5), s, 0.01);
  CHECK(p(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(s.t == 1);
}

TEST_CASE("adam leaves parameters alone for a zero gradient") {
  Matrix p = Matrix::from_rows({{1.5, -2.0}});
  const Matrix keep = p;
  AdamState s;
  adam_step(p, Matrix(1, 2), s, 0.1);
  CHECK(p == keep);
}

TEST_CASE("adam first-step magnitude is lr for any gradient scale") {
  Rng rng(17);
  const double lr = 3e-3;
  for (int trial = 0; trial < 20; ++trial) {
    const double scale = std::pow(10.0, -4.0 + 8.0 * rng.uniform());
    const Matrix g = gaussian(6, 7, scale, rng);
    Matrix p(6, 7);
    AdamState s;
    adam_step(p, g, s, lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(std::abs(p.data()[i]) <= lr * (1 + 1e-6));
      const double gi = std::abs(g.data()[i]);
      CHECK(std::abs(p.data()[i]) == doctest::Approx(lr * gi / (gi + s.eps)).epsilon(1e-12));
      if (gi >= 1e-2) CHECK(std::abs(std::abs(p.data()[i]) - lr) <= 1e-6 * lr);
    }
  }
}

TEST_CASE("eps keeps small first-step updates measurably below lr") {
  // At |g| = 1e-4 the shortfall is eps/(|g|+eps), about 1e-4 relative.
  Matrix p(1, 1);
  AdamState s;
  adam_step(p, Matrix(1, 1, 1e-4), s, 1.0);
  CHECK(-p(0, 0) == doctest::Approx(1e-4 / (1e-4 + 1e-8)).epsilon(1e-14));
  CHECK(1.0 + p(0, 0) > 9e-5);
}

TEST_CASE("a growing gradient makes the second adam step slightly longer than lr") {
  // Bias-corrected Adam is not bounded by lr per step: g2 = 1.1 g1 gives about 1.0013 lr.
  Matrix p(1, 1);
  AdamState s;
  adam_step(p, Matrix(1, 1, 1.0), s, 1.0);
  const double after_one = p(0, 0);
  adam_step(p, Matrix(1, 1, 1.1), s, 1.0);
  const double second = after_one - p(0, 0);
  CHECK(second > 1.001);
  CHECK(second < 1.002);
}

TEST_CASE("adam second moments stay non-negative and the counter advances by one") {
  Rng rng(2);
  Matrix p = gaussian(3, 3, 1.0, rng);
  AdamState s;
  for (int t = 1; t <= 25; ++t) {
    adam_step(p, gaussian(3, 3, 1.0, rng), s, 1e-2);
    CHECK(s.t == t);
    for (double v : s.v.values()) CHECK(v >= 0.0);
  }
}

TEST_CASE("adam is bitwise deterministic") {
  auto run = [] {
    Rng rng(99);
    Matrix p = gaussian(4, 4, 1.0, rng);
    AdamState s;
    for (int t = 0; t < 30; ++t) adam_step(p, gaussian(4, 4, 1.0, rng), s, 1e-3);
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects bad input") {
  Matrix p(2, 2);
  AdamState s;
  CHECK_THROWS_AS(adam_step(p, Matrix(2, 3), s, 0.1), Error);
  Matrix g(2, 2);
  g(0, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step(p, g, s, 0.1), Error);
}

TEST_CASE("sgd step") {
  Matrix p(1, 1, 1.0);
  sgd_step(p, Matrix(1, 1, 2.0), 0.1);
  CHECK(p(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

  Matrix q(1, 1, 1.0);
  sgd_step(q, Matrix(1, 1, 2.0), 0.0);
  CHECK(q(0, 0) == 1.0);

  Matrix half = Matrix::from_rows({{0.25, -1.0}}), full = half;
  const Matrix g = Matrix::from_rows({{0.5, 0.75}});
  sgd_step(half, g, 0.05);
  sgd_step(half, g, 0.05);
  sgd_step(full, g, 0.1);
  CHECK(std::abs(half(0, 0) - full(0, 0)) < 1e-15);
  CHECK(std::abs(half(0, 1) - full(0, 1)) < 1e-15);

  Matrix bad(1, 1, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(sgd_step(p, bad, 0.1), Error);
}

TEST_CASE("sgd on the rank-one model follows the closed-form gradients") {
  // f = b a^T x, loss 0.5 (f - y)^2; g_a = b (f - y) x, g_b = a^T x (f - y)
  const Matrix x = Matrix::from_rows({{0.5}, {-1.0}, {2.0}});
  Matrix a = Matrix::from_rows({{0.1}, {0.2}, {-0.3}});
  Matrix b(1, 1, 0.7);
  const double y = 1.25;
  const double ax = matmul_tn(a, x)(0, 0);
  const double f = b(0, 0) * ax;
  Matrix ga = x;
  ga *= b(0, 0) * (f - y);
  const Matrix gb(1, 1, ax * (f - y));
  Matrix a2 = a, b2 = b;
  sgd_step(a2, ga, 0.1);
  sgd_step(b2, gb, 0.1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a2(i, 0) == doctest::Approx(a(i, 0) - 0.1 * b(0, 0) * (f - y) * x(i, 0)));
  CHECK(b2(0, 0) == doctest::Approx(b(0, 0) - 0.1 * ax * (f - y)));
}

TEST_CASE("learning-rate realization") {
  CHECK(realize_lr({1.0, Gamma(-1, 2), 1.0}, 4096).eta_a == 0.015625);
  CHECK(realize_lr({1.0, Gamma(-1), 1.0}, 1024).eta_a == 1.0 / 1024);
  const auto plus = realize_lr({1.0, Gamma(-1), 1024.0}, 1024);
  CHECK(plus.eta_b == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(plus.eta_b / plus.eta_a == doctest::Approx(1024.0));
  CHECK_THROWS_AS(realize_lr({1.0, Gamma::neg_inf(), 1.0}, 16), Error);
  CHECK_THROWS_AS(realize_lr({0.0, Gamma(-1), 1.0}, 16), Error);
  CHECK_THROWS_AS(realize_lr({1.0, Gamma(-1), 0.0}, 16), Error);
  CHECK_THROWS_AS(realize_lr({1.0, Gamma(-1), 1.0}, 0.5), Error);
}
