// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "loradyn/error.hpp"
#include "loradyn/tensor.hpp"
#include "support.hpp"

using namespace loradyn;

TEST_CASE("matmul small products") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(a, Matrix::identity(2)) == a);
  CHECK(matmul(Matrix::identity(2), Matrix(2, 1)) == Matrix(2, 1));
  const Matrix s = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
  CHECK(s.rows() == 1);
  CHECK(s.cols() == 1);
  CHECK(s(0, 0) == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions and names both shapes") {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  Rng rng(3);
  const Matrix a = gaussian(4, 3, 1.0, rng), b = gaussian(4, 5, 1.0, rng), c = gaussian(6, 3, 1.0, rng);
  CHECK(matmul_tn(a, b) == matmul(transpose(a), b));
  CHECK(matmul_nt(a, c) == matmul(a, transpose(c)));
}

TEST_CASE("matmul associativity on random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = gaussian(4, 5, 1.0, rng), b = gaussian(5, 3, 1.0, rng), c = gaussian(3, 6, 1.0, rng);
    const Matrix l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
    CHECK(testing::max_abs(l - r) <= 1e-10 * testing::max_abs(l));
  }
}

TEST_CASE("gaussian contract") {
  Rng rng(5);
  CHECK(gaussian(3, 4, 0.0, rng) == Matrix(3, 4));
  CHECK_THROWS_AS(gaussian(1, 1, -1.0, rng), Error);

  Rng r1(42), r2(42);
  CHECK(gaussian(7, 9, 0.3, r1) == gaussian(7, 9, 0.3, r2));

  Rng big(2024);
  const Matrix m = gaussian(1000, 1000, 1.0, big);
  const double mean = std::accumulate(m.values().begin(), m.values().end(), 0.0) / m.size();
  double var = 0.0;
  for (double v : m.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.size() - 1);
  CHECK(var >= 0.99);
  CHECK(var <= 1.01);
}

TEST_CASE("child streams are distinct and reproducible") {
  Rng a = Rng::child(7, 1), b = Rng::child(7, 1), c = Rng::child(7, 2);
  const auto x = a.next_u64();
  CHECK(x == b.next_u64());
  CHECK(x != c.next_u64());
}

TEST_CASE("generator output is pinned") {
  // Frozen values guard against accidental changes to the stream.
  // xoshiro256** seeded through splitmix64, values from an independent implementation.
  Rng rng(0);
  CHECK(rng.next_u64() == 0x99ec5f36cb75f2b4ULL);
  CHECK(rng.next_u64() == 0xbf6e1f784956452aULL);
  CHECK(rng.next_u64() == 0x1a5f849d4933e6e0ULL);
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  Rng p(9);
  auto perm = permutation(50, p);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(perm[i] == i);
}

TEST_CASE("relu and its mask") {
  const Matrix x = Matrix::from_rows({{-1, 0, 2}});
  CHECK(relu(x) == Matrix::from_rows({{0, 0, 2}}));
  CHECK(relu_backward(Matrix::from_rows({{-1, 2}}), Matrix::from_rows({{5, 7}})) == Matrix::from_rows({{0, 7}}));
  CHECK(relu_backward(Matrix::from_rows({{0.0}}), Matrix::from_rows({{3.0}}))(0, 0) == 0.0);
  CHECK_THROWS_AS(relu_backward(Matrix(1, 2), Matrix(2, 1)), Error);
  Rng rng(8);
  const Matrix r = gaussian(6, 6, 1.0, rng);
  CHECK(relu(relu(r)) == relu(r));
}

TEST_CASE("rms") {
  CHECK(rms(Matrix::from_rows({{3, 4}})) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
  CHECK(rms(Matrix(4, 4)) == 0.0);
  CHECK_THROWS_AS(rms(Matrix()), Error);
  for (std::size_t n : {1u, 7u, 1000u}) CHECK(rms(Matrix(n, 1, -2.5)) == doctest::Approx(2.5).epsilon(1e-15));
  Rng rng(4);
  const Matrix x = gaussian(5, 5, 1.0, rng);
  CHECK(rms(-3.0 * x) == doctest::Approx(3.0 * rms(x)).epsilon(1e-15));
}

TEST_CASE("softmax cross-entropy") {
  for (int label = 0; label < 10; ++label)
    CHECK(softmax_cross_entropy(Matrix(10, 1, 0.7), label).loss == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  Matrix hot(10, 1);
  hot(4, 0) = 1000.0;
  CHECK(softmax_cross_entropy(hot, 4).loss < 1e-12);
  CHECK_THROWS_AS(softmax_cross_entropy(Matrix(10, 1), 10), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(Matrix(10, 1), -1), Error);

  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix logits = gaussian(10, 1, 3.0, rng);
    const auto ce = softmax_cross_entropy(logits, trial);
    double sum = 0.0;
    for (double v : ce.dlogits.values()) sum += v;
    CHECK(std::abs(sum) < 1e-15);
  }
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix logits = gaussian(10, 5, 2.0, rng);
    std::vector<int> labels;
    for (int j = 0; j < 5; ++j) labels.push_back(static_cast<int>(rng.below(10)));
    const auto ce = softmax_cross_entropy_batch(logits, labels);
    const Matrix num = testing::numeric_grad(logits, [&] { return softmax_cross_entropy_batch(logits, labels).loss; });
    CHECK(testing::max_rel_error(ce.dlogits, num) < 1e-6);
  }
}

TEST_CASE("relu and matmul backward match finite differences on 5x5 inputs") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = gaussian(5, 5, 1.0, rng);
    const Matrix w = gaussian(5, 5, 1.0, rng), up = gaussian(5, 5, 1.0, rng);
    // L = sum(up .* relu(w x))
    auto loss = [&] {
      const Matrix y = relu(matmul(w, x));
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * up.data()[i];
      return s;
    };
    const Matrix pre = matmul(w, x);
    const Matrix analytic = matmul_tn(w, relu_backward(pre, up));
    CHECK(testing::max_rel_error(analytic, testing::numeric_grad(x, loss)) < 1e-6);
  }
}

TEST_CASE("hash detects a single-bit change") {
  Rng rng(1);
  Matrix m = gaussian(3, 3, 1.0, rng);
  const auto h = hash_matrix(m);
  m(1, 1) = std::nextafter(m(1, 1), 10.0);
  CHECK(hash_matrix(m) != h);
}

TEST_CASE("all_finite") {
  Matrix m(2, 2, 1.0);
  CHECK(all_finite(m));
  m(0, 1) = std::nan("");
  CHECK_FALSE(all_finite(m));
}
