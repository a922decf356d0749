// SPDX-License-Identifier: Apache-2.0
#include "loradyn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "loradyn/error.hpp"

namespace loradyn {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    fail(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape());
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows[0].size() : 0;
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) fail(ErrorCode::ShapeMismatch, "ragged row list");
    std::copy(rows[i].begin(), rows[i].end(), m.data() + i * c);
  }
  return m;
}

std::string Matrix::shape() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

static void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

Matrix& Matrix::operator+=(const Matrix& o) {
  require_same(*this, o, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  require_same(*this, o, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double c) {
  for (double& v : data_) v *= c;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double c, Matrix a) { return a *= c; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    fail(ErrorCode::ShapeMismatch, "matmul: inner dimensions differ, " + a.shape() + " x " + b.shape());
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  Matrix c(m, p);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * p;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = A[i * k + l];
      const double* brow = B + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    fail(ErrorCode::ShapeMismatch, "matmul_tn: inner dimensions differ, " + a.shape() + "^T x " + b.shape());
  const std::size_t k = a.rows(), m = a.cols(), p = b.cols();
  Matrix c(m, p);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  for (std::size_t l = 0; l < k; ++l) {
    const double* brow = B + l * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = A[l * m + i];
      double* crow = C + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    fail(ErrorCode::ShapeMismatch, "matmul_nt: inner dimensions differ, " + a.shape() + " x " + b.shape() + "^T");
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols())
    fail(ErrorCode::ShapeMismatch, "slice_cols: range exceeds " + a.shape());
  Matrix s(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::memcpy(s.data() + i * count, a.data() + i * a.cols() + begin, count * sizeof(double));
  return s;
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = std::max(0.0, y.data()[i]);
  return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& upstream) {
  require_same(x, upstream, "relu_backward");
  Matrix g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (x.data()[i] <= 0.0) g.data()[i] = 0.0;
  return g;
}

double rms(const Matrix& x) {
  if (x.empty()) fail(ErrorCode::InvalidArgument, "rms of an empty matrix");
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

bool all_finite(const Matrix& x) {
  return std::all_of(x.values().begin(), x.values().end(), [](double v) { return std::isfinite(v); });
}

// Loss and gradient for column j of logits, written into column j of grad.
static double ce_column(const Matrix& logits, std::size_t j, int label, Matrix& grad, double scale) {
  const std::size_t k = logits.rows();
  if (label < 0 || static_cast<std::size_t>(label) >= k)
    fail(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
  double mx = logits(0, j);
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits(i, j));
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += std::exp(logits(i, j) - mx);
  const double logz = std::log(z) + mx;
  for (std::size_t i = 0; i < k; ++i) {
    double p = std::exp(logits(i, j) - logz);
    grad(i, j) = scale * (p - (static_cast<int>(i) == label ? 1.0 : 0.0));
  }
  return logz - logits(static_cast<std::size_t>(label), j);
}

CrossEntropy softmax_cross_entropy(const Matrix& logits, int label) {
  if (logits.cols() != 1 || logits.rows() == 0)
    fail(ErrorCode::ShapeMismatch, "softmax_cross_entropy expects a column, got " + logits.shape());
  CrossEntropy out;
  out.dlogits = Matrix(logits.rows(), 1);
  out.loss = ce_column(logits, 0, label, out.dlogits, 1.0);
  return out;
}

CrossEntropy softmax_cross_entropy_batch(const Matrix& logits, const std::vector<int>& labels) {
  if (logits.cols() != labels.size() || labels.empty())
    fail(ErrorCode::ShapeMismatch, "softmax_cross_entropy_batch: " + logits.shape() + " logits for " +
                                       std::to_string(labels.size()) + " labels");
  CrossEntropy out;
  out.dlogits = Matrix(logits.rows(), logits.cols());
  const double scale = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) total += ce_column(logits, j, labels[j], out.dlogits, scale);
  out.loss = total * scale;
  return out;
}

// ---- Rng ----

static std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

Rng Rng::child(std::uint64_t master, std::uint64_t index) {
  std::uint64_t x = master;
  std::uint64_t a = splitmix64(x);
  std::uint64_t y = index ^ 0xd1b54a32d192ed03ULL;
  std::uint64_t b = splitmix64(y);
  return Rng(a ^ rotl(b, 17));
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double mag = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * std::numbers::pi * u2;
  spare_ = mag * std::sin(ang);
  has_spare_ = true;
  return mag * std::cos(ang);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) fail(ErrorCode::InvalidArgument, "Rng::below needs a positive bound");
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

Matrix gaussian(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "gaussian: sigma must be >= 0");
  Matrix m(rows, cols);
  if (sigma == 0.0) return m;
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng.normal();
  return m;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::uint64_t hash_matrix(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const unsigned char* p, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  std::uint64_t dims[2] = {m.rows(), m.cols()};
  mix(reinterpret_cast<const unsigned char*>(dims), sizeof dims);
  mix(reinterpret_cast<const unsigned char*>(m.data()), m.size() * sizeof(double));
  return h;
}

}  // namespace loradyn
