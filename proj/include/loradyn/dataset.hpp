// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loradyn/tensor.hpp"

namespace loradyn {

struct Dataset {
  Matrix images;  // N x pixels, entries in [0,1]
  std::vector<int> labels;
  std::string name;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return images.cols(); }
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;  // 0x00000803
inline constexpr std::uint32_t kIdxLabelMagic = 2049;  // 0x00000801

// Raw bytes may be gzip-wrapped (0x1F 0x8B prefix).
Matrix parse_idx_images(const std::vector<unsigned char>& bytes);
std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes);
Matrix load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

// Pixels are written as round(255*v). side*side must equal the column count.
std::vector<unsigned char> idx_image_bytes(const Matrix& images, std::size_t side_rows, std::size_t side_cols);
std::vector<unsigned char> idx_label_bytes(const std::vector<int>& labels);

Dataset make_dataset(Matrix images, std::vector<int> labels, std::string name, std::string split);
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, std::string name,
                         std::string split);

// Class-conditional Gaussians around fixed prototypes. The prototype sets do
// not depend on seed; seed only drives labels and noise.
struct SyntheticTask {
  double second_set_weight = 0.0;  // prototypes = (1-w)*first + w*second
  int label_shift = 0;             // label = (class + shift) mod classes
};

Dataset synthetic_dataset(std::uint64_t seed, std::size_t n_samples, std::size_t d = 784,
                          std::size_t classes = 10, const SyntheticTask& task = {});

struct Batch {
  Matrix x;  // dim x batch
  std::vector<int> labels;
};

// Columns for the listed rows of the dataset.
Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& rows);
// Whole dataset as one column block.
Batch as_batch(const Dataset& ds);

class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch, std::uint64_t seed);
  // nullopt once the epoch is exhausted; the following call starts a new shuffled epoch.
  std::optional<Batch> next();
  // Like next() but rolls into the next epoch without a gap.
  Batch next_cycle();
  // Row indices of the next batch, same sequencing as next().
  std::optional<std::vector<std::size_t>> next_rows();
  std::vector<std::size_t> next_rows_cycle();
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();
  const Dataset* ds_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  bool exhausted_ = false;
};

}  // namespace loradyn
