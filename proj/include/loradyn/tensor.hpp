// SPDX-License-Identifier: Apache-2.0
//
// Dense fp64 matrices and a portable seeded generator.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace loradyn {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  std::string shape() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix& o) const = default;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double c);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double c, Matrix a);

// a*b. Each output entry accumulates over the inner index in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);
// transpose(a)*b and a*transpose(b), same accumulation order as matmul.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Columns [begin, begin+count) of a.
Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count);

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& upstream);

double rms(const Matrix& x);
bool all_finite(const Matrix& x);

struct CrossEntropy {
  double loss = 0.0;
  Matrix dlogits;
};
// logits is classes x 1.
CrossEntropy softmax_cross_entropy(const Matrix& logits, int label);
// logits is classes x batch; loss and gradient are averaged over columns.
CrossEntropy softmax_cross_entropy_batch(const Matrix& logits, const std::vector<int>& labels);

// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  // Independent stream derived from (master seed, index).
  static Rng child(std::uint64_t master, std::uint64_t index);

  std::uint64_t next_u64();
  double uniform();  // [0, 1) with 53 random bits
  double normal();
  std::uint64_t below(std::uint64_t bound);  // uniform in [0, bound)

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix gaussian(std::size_t rows, std::size_t cols, double sigma, Rng& rng);
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

// FNV-1a over the raw bytes, used to detect weight mutation.
std::uint64_t hash_matrix(const Matrix& m);

}  // namespace loradyn
