// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "loradyn/gamma.hpp"
#include "loradyn/tensor.hpp"

namespace loradyn {

struct AdamState {
  Matrix m, v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW style)

  AdamState() = default;
  explicit AdamState(const Matrix& like) : m(like.rows(), like.cols()), v(like.rows(), like.cols()) {}
};

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr);
void sgd_step(Matrix& param, const Matrix& grad, double lr);

// eta(n) = c * n^exponent for A; B uses ratio * eta_A.
struct LrSpec {
  double c = 1.0;
  Gamma exponent = Gamma(-1, 2);
  double ratio = 1.0;
};

struct RealizedLr {
  double eta_a = 0.0;
  double eta_b = 0.0;
};

RealizedLr realize_lr(const LrSpec& spec, double n);

}  // namespace loradyn
