// SPDX-License-Identifier: Apache-2.0
#include "loradyn/optim.hpp"

#include <cmath>

#include "loradyn/error.hpp"

namespace loradyn {

static void check_grad(const Matrix& param, const Matrix& grad, const char* who) {
  if (!param.same_shape(grad))
    fail(ErrorCode::ShapeMismatch, std::string(who) + ": param " + param.shape() + " vs grad " + grad.shape());
  if (!all_finite(grad)) fail(ErrorCode::NonFinite, std::string(who) + ": non-finite gradient");
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& s, double lr) {
  check_grad(param, grad, "adam_step");
  if (s.t == 0 && s.m.empty()) {
    s.m = Matrix(param.rows(), param.cols());
    s.v = Matrix(param.rows(), param.cols());
  }
  if (!s.m.same_shape(param)) fail(ErrorCode::ShapeMismatch, "adam_step: state " + s.m.shape() + " vs param " + param.shape());
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  double* p = param.data();
  double* m = s.m.data();
  double* v = s.v.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    if (s.weight_decay != 0.0) p[i] -= lr * s.weight_decay * p[i];
    p[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

void sgd_step(Matrix& param, const Matrix& grad, double lr) {
  check_grad(param, grad, "sgd_step");
  double* p = param.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) p[i] -= lr * g[i];
}

RealizedLr realize_lr(const LrSpec& spec, double n) {
  if (n < 1.0) fail(ErrorCode::InvalidArgument, "width must be >= 1");
  if (spec.exponent.is_neg_inf()) fail(ErrorCode::InvalidArgument, "a -inf learning-rate exponent means a zero rate");
  if (!(spec.c > 0.0)) fail(ErrorCode::InvalidArgument, "learning-rate constant must be positive");
  if (!(spec.ratio > 0.0)) fail(ErrorCode::InvalidArgument, "learning-rate ratio must be positive");
  RealizedLr r;
  r.eta_a = spec.c * std::pow(n, spec.exponent.to_double());
  r.eta_b = spec.ratio * r.eta_a;
  return r;
}

}  // namespace loradyn
