// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests: finite-difference oracles and temp dirs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "loradyn/tensor.hpp"

namespace testing {

// Central differences of a scalar function with respect to every entry of x.
inline loradyn::Matrix numeric_grad(loradyn::Matrix& x, const std::function<double()>& f, double h = 1e-5) {
  loradyn::Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest entry error relative to the largest numeric entry of the same tensor.
// Entries the ReLU masks out are exact zeros analytically and O(1e-11) numerically,
// so a per-entry ratio would be noise over noise.
inline double max_rel_error(const loradyn::Matrix& analytic, const loradyn::Matrix& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic.data()[i] - numeric.data()[i]));
    scale = std::max(scale, std::max(std::abs(numeric.data()[i]), std::abs(analytic.data()[i])));
  }
  return scale == 0.0 ? diff : diff / scale;
}

inline double max_abs(const loradyn::Matrix& m) {
  double v = 0.0;
  for (double x : m.values()) v = std::max(v, std::abs(x));
  return v;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("loradyn_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
