// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters on a frozen weight and the two-hidden-layer toy classifier.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loradyn/tensor.hpp"

namespace loradyn {

enum class InitKind { A, B, AB, ABPlus };

std::string init_kind_name(InitKind k);  // "init_a", "init_b", "init_ab", "init_ab_plus"
InitKind parse_init_kind(const std::string& s);

// beta multiplies the Kaiming standard deviation 1/sqrt(fan_in) (for init_b: 1/sqrt(r)).
struct InitScheme {
  InitKind kind = InitKind::A;
  double beta = 1.0;
};

struct LoraLayer {
  Matrix W;  // n1 x n2, frozen
  Matrix A;  // r x n2
  Matrix B;  // n1 x r
  double s = 1.0;
  // Factored copy of the starting adapter, subtracted in every forward pass.
  bool subtract_init = false;
  Matrix A0, B0;

  std::size_t rank() const { return A.rows(); }
  bool attached() const { return A.rows() > 0; }
};

// Takes ownership of W. Samples A first, then B.
LoraLayer init_lora(Matrix W, const InitScheme& scheme, std::size_t r, double s, Rng& rng);

struct LoraForward {
  Matrix za;    // r x batch
  Matrix zb;    // n1 x batch, s*B*A*Z
  Matrix zbar;  // n1 x batch
};

// wz, if given, is the precomputed W*Z.
LoraForward forward_lora(const LoraLayer& layer, const Matrix& z, const Matrix* wz = nullptr);

struct LoraGrads {
  Matrix ga, gb;
};
LoraGrads backward_lora(const LoraLayer& layer, const Matrix& z, const Matrix& za, const Matrix& dzbar);

// Gradient of the layer output with respect to its input, through W and the adapter.
Matrix lora_input_grad(const LoraLayer& layer, const Matrix& dzbar);

struct DeltaTerms {
  Matrix d1, d2, d3;
};
DeltaTerms delta_decompose(const Matrix& a_prev, const Matrix& b_prev, const Matrix& a_new, const Matrix& b_new,
                           const Matrix& z, double s);

struct ToyModel {
  Matrix w_in;       // n x d
  LoraLayer hidden;  // W is n x n
  Matrix w_out;      // classes x n

  std::size_t input_dim() const { return w_in.cols(); }
  std::size_t width() const { return w_in.rows(); }
  std::size_t classes() const { return w_out.rows(); }
};

// Kaiming (variance 1/fan_in) frozen weights; no adapter attached.
ToyModel make_toy(std::size_t d, std::size_t n, std::size_t classes, Rng& rng);

// Replaces any adapter on the hidden layer.
void attach_lora(ToyModel& model, const InitScheme& scheme, std::size_t r, double s, Rng& rng);

struct ToyCache {
  Matrix x, h1_pre, h1, za, h2_pre, h2, logits;
};

ToyCache forward_toy(const ToyModel& model, const Matrix& x);
// Same pass from precomputed first-layer features h1 and w0h1 = W0*h1.
ToyCache forward_toy_features(const ToyModel& model, const Matrix& h1, const Matrix& w0h1);

struct ToyGrads {
  Matrix w_in, w0, w_out;  // filled when train_all
  Matrix a, b;             // filled when an adapter is attached
};
ToyGrads backward_toy(const ToyModel& model, const ToyCache& cache, const Matrix& dlogits, bool train_all);

std::uint64_t frozen_hash(const ToyModel& model);

struct CheckpointMeta {
  std::string scheme = "none";
  std::uint64_t seed = 0;
  long step = 0;
};

void save_checkpoint(const std::string& path, const ToyModel& model, const CheckpointMeta& meta);
ToyModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace loradyn
