// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "loradyn/error.hpp"
#include "loradyn/lora.hpp"
#include "loradyn/optim.hpp"
#include "support.hpp"

using namespace loradyn;

namespace {

double half_sq_against(const Matrix& out, const Matrix& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = out.data()[i] - target.data()[i];
    s += 0.5 * e * e;
  }
  return s;
}

LoraLayer random_layer(std::size_t n1, std::size_t n2, std::size_t r, InitKind kind, Rng& rng, double s = 1.0) {
  return init_lora(gaussian(n1, n2, 1.0 / std::sqrt(static_cast<double>(n2)), rng), {kind, 1.0}, r, s, rng);
}

}  // namespace

TEST_CASE("scheme names round-trip") {
  for (InitKind k : {InitKind::A, InitKind::B, InitKind::AB, InitKind::ABPlus})
    CHECK(parse_init_kind(init_kind_name(k)) == k);
  CHECK_THROWS_AS(parse_init_kind("init_c"), Error);
}

TEST_CASE("init schemes") {
  Rng rng(1);
  const auto a = random_layer(16, 16, 2, InitKind::A, rng);
  CHECK(a.B == Matrix(16, 2));
  CHECK(testing::max_abs(a.A) > 0.0);
  const auto b = random_layer(16, 16, 2, InitKind::B, rng);
  CHECK(b.A == Matrix(2, 16));
  const auto ab = random_layer(16, 16, 2, InitKind::AB, rng);
  CHECK(ab.subtract_init);
  const auto abp = random_layer(16, 16, 2, InitKind::ABPlus, rng);
  CHECK_FALSE(abp.subtract_init);

  CHECK_THROWS_AS(init_lora(Matrix(16, 16), {InitKind::A, 1.0}, 5, 1.0, rng), Error);
  CHECK_THROWS_AS(init_lora(Matrix(16, 16), {InitKind::AB, 0.0}, 2, 1.0, rng), Error);
  CHECK_THROWS_AS(init_lora(Matrix(16, 16), {InitKind::A, 0.0}, 2, 1.0, rng), Error);
}

TEST_CASE("init variances follow the scheme") {
  Rng rng(2);
  const std::size_t n = 4096, r = 32;
  const double beta = 0.5;
  const auto ab = init_lora(Matrix(n, n), {InitKind::AB, beta}, r, 1.0, rng);
  const double expect = beta / std::sqrt(static_cast<double>(n));
  CHECK(rms(ab.A) == doctest::Approx(expect).epsilon(0.01));
  CHECK(rms(ab.B) == doctest::Approx(expect).epsilon(0.01));
  const auto b = init_lora(Matrix(n, n), {InitKind::B, beta}, r, 1.0, rng);
  CHECK(rms(b.B) == doctest::Approx(beta / std::sqrt(static_cast<double>(r))).epsilon(0.01));
}

TEST_CASE("forward examples") {
  LoraLayer L;
  L.W = Matrix(1, 1);
  L.A = Matrix(1, 1, 2.0);
  L.B = Matrix(1, 1, 3.0);
  L.s = 1.0;
  const auto f = forward_lora(L, Matrix(1, 1, 1.0));
  CHECK(f.zb(0, 0) == 6.0);
  CHECK(f.zbar(0, 0) == 6.0);

  Rng rng(3);
  const auto a = random_layer(8, 8, 2, InitKind::A, rng);
  const Matrix z = gaussian(8, 3, 1.0, rng);
  CHECK(forward_lora(a, z).zb == Matrix(8, 3));
  CHECK(forward_lora(a, z).zbar == matmul(a.W, z));

  auto abp = random_layer(8, 8, 2, InitKind::ABPlus, rng, 0.75);
  const Matrix dense = 0.75 * matmul(abp.B, abp.A);
  const auto g = forward_lora(abp, z);
  CHECK(testing::max_abs(g.zb - matmul(dense, z)) < 1e-12);
  CHECK(rms(g.zbar - matmul(abp.W, z)) > 0.0);

  CHECK_THROWS_AS(forward_lora(abp, Matrix(7, 1)), Error);
}

TEST_CASE("subtracting init starts exactly at the frozen function") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ab = random_layer(24, 24, 3, InitKind::AB, rng, 1.0 + trial);
    const Matrix z = gaussian(24, 5, 1.0, rng);
    CHECK(forward_lora(ab, z).zbar == matmul(ab.W, z));
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const InitKind kinds[] = {InitKind::ABPlus, InitKind::AB};
    LoraLayer L = random_layer(8, 8, 2, kinds[trial % 2], rng, 0.5 + rng.uniform());
    // Move away from the start so the subtraction does not hide anything.
    L.A += gaussian(2, 8, 0.3, rng);
    L.B += gaussian(8, 2, 0.3, rng);
    Matrix z = gaussian(8, 3, 1.0, rng);
    const Matrix y = gaussian(8, 3, 1.0, rng);
    auto loss = [&] { return half_sq_against(forward_lora(L, z).zbar, y); };
    const auto f = forward_lora(L, z);
    const Matrix dz = f.zbar - y;
    const auto g = backward_lora(L, z, f.za, dz);
    CHECK(testing::max_rel_error(g.ga, testing::numeric_grad(L.A, loss)) < 1e-6);
    CHECK(testing::max_rel_error(g.gb, testing::numeric_grad(L.B, loss)) < 1e-6);
    CHECK(testing::max_rel_error(lora_input_grad(L, dz), testing::numeric_grad(z, loss)) < 1e-6);
  }
}

TEST_CASE("rank-one gradient is b (f - y) x") {
  LoraLayer L;
  L.W = Matrix(1, 3);
  L.A = Matrix::from_rows({{0.2, -0.1, 0.4}});
  L.B = Matrix(1, 1, 1.5);
  const Matrix x = Matrix::from_rows({{1.0}, {2.0}, {-0.5}});
  const auto f = forward_lora(L, x);
  const double y = 0.3, err = f.zbar(0, 0) - y;
  const auto g = backward_lora(L, x, f.za, Matrix(1, 1, err));
  for (std::size_t j = 0; j < 3; ++j) CHECK(g.ga(0, j) == doctest::Approx(1.5 * err * x(j, 0)).epsilon(1e-14));
  const auto zero = backward_lora(L, x, f.za, Matrix(1, 1));
  CHECK(zero.ga == Matrix(1, 3));
  CHECK(zero.gb == Matrix(1, 1));
}

TEST_CASE("delta decomposition") {
  SUBCASE("scalar case") {
    const auto d = delta_decompose(Matrix(1, 1, 1.0), Matrix(1, 1, 2.0), Matrix(1, 1, 1.1), Matrix(1, 1, 2.2),
                                   Matrix(1, 1, 1.0), 1.0);
    CHECK(d.d1(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(d.d2(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(d.d3(0, 0) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(d.d1(0, 0) + d.d2(0, 0) + d.d3(0, 0) == doctest::Approx(2.42 - 2.0).epsilon(1e-12));
  }
  SUBCASE("identity on random inputs") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix a0 = gaussian(3, 12, 1.0, rng), b0 = gaussian(9, 3, 1.0, rng);
      const Matrix a1 = a0 + gaussian(3, 12, 0.1, rng), b1 = b0 + gaussian(9, 3, 0.1, rng);
      const Matrix z = gaussian(12, 4, 1.0, rng);
      const double s = 0.5;
      const auto d = delta_decompose(a0, b0, a1, b1, z, s);
      Matrix change = s * matmul(b1, matmul(a1, z));
      change -= s * matmul(b0, matmul(a0, z));
      CHECK(rms(d.d1 + d.d2 + d.d3 - change) <= 1e-12 * rms(change));
    }
  }
  SUBCASE("frozen B leaves only the first term") {
    Rng rng(7);
    const Matrix a0 = gaussian(2, 5, 1.0, rng), b0 = gaussian(4, 2, 1.0, rng);
    const auto d = delta_decompose(a0, b0, a0 + gaussian(2, 5, 1.0, rng), b0, gaussian(5, 1, 1.0, rng), 1.0);
    CHECK(d.d2 == Matrix(4, 1));
    CHECK(d.d3 == Matrix(4, 1));
  }
  CHECK_THROWS_AS(delta_decompose(Matrix(2, 3), Matrix(4, 2), Matrix(2, 4), Matrix(4, 2), Matrix(3, 1), 1.0), Error);
}

TEST_CASE("first adam step moves every adapter entry by lr times |g|/(|g|+eps)") {
  Rng rng(12);
  LoraLayer L = random_layer(16, 16, 2, InitKind::ABPlus, rng);
  const Matrix z = gaussian(16, 1, 1.0, rng), y = gaussian(16, 1, 1.0, rng);
  const auto f = forward_lora(L, z);
  const auto g = backward_lora(L, z, f.za, f.zbar - y);
  const Matrix a0 = L.A, b0 = L.B;
  AdamState sa, sb;
  const double lr = 0.01;
  adam_step(L.A, g.ga, sa, lr);
  adam_step(L.B, g.gb, sb, lr);
  const Matrix da = L.A - a0, db = L.B - b0;
  const double eps = AdamState{}.eps;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double gi = std::abs(g.ga.data()[i]);
    CHECK(std::abs(da.data()[i]) == doctest::Approx(lr * gi / (gi + eps)).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < db.size(); ++i) {
    const double gi = std::abs(g.gb.data()[i]);
    CHECK(std::abs(db.data()[i]) == doctest::Approx(lr * gi / (gi + eps)).epsilon(1e-12));
  }
  const auto d = delta_decompose(a0, b0, L.A, L.B, z, L.s);
  CHECK(rms(d.d3 - L.s * matmul(db, matmul(da, z))) <= 1e-15 * rms(d.d3));
}

TEST_CASE("toy model at zero input is uniform") {
  Rng rng(8);
  const ToyModel m = make_toy(6, 8, 10, rng);
  const auto c = forward_toy(m, Matrix(6, 2));
  CHECK(c.logits == Matrix(10, 2));
  CHECK(softmax_cross_entropy_batch(c.logits, {3, 7}).loss == doctest::Approx(std::log(10.0)).epsilon(1e-15));
}

TEST_CASE("toy model gradients match finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ToyModel m = make_toy(6, 8, 10, rng);
    const InitKind kinds[] = {InitKind::A, InitKind::B, InitKind::AB, InitKind::ABPlus};
    attach_lora(m, {kinds[trial % 4], 1.0}, 2, 1.0, rng);
    m.hidden.A += gaussian(2, 8, 0.3, rng);
    m.hidden.B += gaussian(8, 2, 0.3, rng);
    Matrix x(6, 4);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    const std::vector<int> labels = {1, 4, 9, 0};
    auto loss = [&] { return softmax_cross_entropy_batch(forward_toy(m, x).logits, labels).loss; };
    const auto c = forward_toy(m, x);
    const auto ce = softmax_cross_entropy_batch(c.logits, labels);
    const auto g = backward_toy(m, c, ce.dlogits, true);
    CAPTURE(trial);
    CHECK(testing::max_rel_error(g.a, testing::numeric_grad(m.hidden.A, loss)) < 1e-6);
    CHECK(testing::max_rel_error(g.b, testing::numeric_grad(m.hidden.B, loss)) < 1e-6);
    CHECK(testing::max_rel_error(g.w_in, testing::numeric_grad(m.w_in, loss)) < 1e-6);
    CHECK(testing::max_rel_error(g.w0, testing::numeric_grad(m.hidden.W, loss)) < 1e-6);
    CHECK(testing::max_rel_error(g.w_out, testing::numeric_grad(m.w_out, loss)) < 1e-6);
  }
}

TEST_CASE("cached first-layer features give the same logits as the full pass") {
  Rng rng(21);
  for (InitKind kind : {InitKind::A, InitKind::B, InitKind::AB, InitKind::ABPlus}) {
    ToyModel m = make_toy(6, 8, 10, rng);
    attach_lora(m, {kind, 1.5}, 2, 1.0, rng);
    m.hidden.A += gaussian(2, 8, 0.3, rng);
    m.hidden.B += gaussian(8, 2, 0.3, rng);
    const Matrix x = gaussian(6, 5, 1.0, rng);
    const auto full = forward_toy(m, x);
    const auto cached = forward_toy_features(m, full.h1, matmul(m.hidden.W, full.h1));
    CHECK(testing::max_abs(cached.logits - full.logits) <= 1e-13 * testing::max_abs(full.logits));
    CHECK(cached.za == full.za);
  }
}

TEST_CASE("adapter-only training leaves the frozen weights untouched") {
  Rng rng(10);
  ToyModel m = make_toy(6, 8, 10, rng);
  attach_lora(m, {InitKind::AB, 1.0}, 2, 1.0, rng);
  const auto before = frozen_hash(m);
  AdamState sa, sb;
  for (int step = 0; step < 5; ++step) {
    const Matrix x = gaussian(6, 3, 1.0, rng);
    const auto c = forward_toy(m, x);
    const auto ce = softmax_cross_entropy_batch(c.logits, {0, 1, 2});
    const auto g = backward_toy(m, c, ce.dlogits, false);
    CHECK(g.w_in.empty());
    CHECK(g.w0.empty());
    CHECK(g.w_out.empty());
    adam_step(m.hidden.A, g.a, sa, 1e-2);
    adam_step(m.hidden.B, g.b, sb, 1e-2);
  }
  CHECK(frozen_hash(m) == before);
}

TEST_CASE("checkpoint round-trip and validation") {
  testing::TempDir dir("ckpt");
  Rng rng(11);
  ToyModel m = make_toy(6, 8, 10, rng);
  attach_lora(m, {InitKind::AB, 0.5}, 2, 1.0, rng);
  m.hidden.A += gaussian(2, 8, 0.1, rng);
  save_checkpoint(dir / "m.ckpt", m, {"init_ab", 7, 12});
  CheckpointMeta meta;
  const ToyModel back = load_checkpoint(dir / "m.ckpt", &meta);
  CHECK(meta.scheme == "init_ab");
  CHECK(meta.seed == 7);
  CHECK(meta.step == 12);
  CHECK(back.w_in == m.w_in);
  CHECK(back.hidden.W == m.hidden.W);
  CHECK(back.w_out == m.w_out);
  CHECK(back.hidden.A == m.hidden.A);
  CHECK(back.hidden.B == m.hidden.B);
  CHECK(back.hidden.A0 == m.hidden.A0);
  CHECK(back.hidden.subtract_init);
  CHECK(frozen_hash(back) == frozen_hash(m));

  // Same model twice gives identical bytes.
  save_checkpoint(dir / "again.ckpt", m, {"init_ab", 7, 12});
  std::ifstream f1(dir / "m.ckpt", std::ios::binary), f2(dir / "again.ckpt", std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  {
    std::ofstream cut(dir / "cut.ckpt", std::ios::binary);
    cut.write(s1.data(), static_cast<std::streamsize>(s1.size() - 9));
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), Error);
  {
    std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
    bad << "NOTACKPT and some more bytes";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);
}
