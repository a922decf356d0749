// SPDX-License-Identifier: Apache-2.0
#include "loradyn/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "loradyn/error.hpp"

namespace loradyn {

namespace {

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(ErrorCode::Format, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int rc;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorCode::Format, "corrupt gzip stream");
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
  } while (rc != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(ErrorCode::Format, "truncated gzip stream");
  return out;
}

std::vector<unsigned char> maybe_gunzip(const std::vector<unsigned char>& bytes) {
  if (bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B) return gunzip(bytes);
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

std::string magic_name(std::uint32_t m) {
  if (m == kIdxImageMagic) return "2051 (image file)";
  if (m == kIdxLabelMagic) return "2049 (label file)";
  return std::to_string(m);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

Matrix parse_idx_images(const std::vector<unsigned char>& raw) {
  const std::vector<unsigned char> b = maybe_gunzip(raw);
  if (b.size() < 16)
    fail(ErrorCode::Format, "IDX image header truncated: need 16 bytes, have " + std::to_string(b.size()));
  const std::uint32_t magic = be32(b, 0);
  if (magic != kIdxImageMagic)
    fail(ErrorCode::Format, "IDX image loader expected magic 2051, found " + magic_name(magic));
  const std::uint64_t n = be32(b, 4), rows = be32(b, 8), cols = be32(b, 12);
  const std::uint64_t expected = n * rows * cols;
  if (b.size() - 16 < expected)
    fail(ErrorCode::Format, "IDX image payload truncated: expected " + std::to_string(expected) + " bytes, got " +
                                std::to_string(b.size() - 16));
  Matrix m(n, rows * cols);
  for (std::uint64_t i = 0; i < expected; ++i) m.data()[i] = static_cast<double>(b[16 + i]) / 255.0;
  return m;
}

std::vector<int> parse_idx_labels(const std::vector<unsigned char>& raw) {
  const std::vector<unsigned char> b = maybe_gunzip(raw);
  if (b.size() < 8)
    fail(ErrorCode::Format, "IDX label header truncated: need 8 bytes, have " + std::to_string(b.size()));
  const std::uint32_t magic = be32(b, 0);
  if (magic != kIdxLabelMagic)
    fail(ErrorCode::Format, "IDX label loader expected magic 2049, found " + magic_name(magic));
  const std::uint64_t n = be32(b, 4);
  if (b.size() - 8 < n)
    fail(ErrorCode::Format, "IDX label payload truncated: expected " + std::to_string(n) + " bytes, got " +
                                std::to_string(b.size() - 8));
  std::vector<int> labels(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    labels[i] = b[8 + i];
    if (labels[i] >= 10)
      fail(ErrorCode::Format, "label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " is not < 10");
  }
  return labels;
}

Matrix load_idx_images(const std::string& path) { return parse_idx_images(read_file(path)); }
std::vector<int> load_idx_labels(const std::string& path) { return parse_idx_labels(read_file(path)); }

std::vector<unsigned char> idx_image_bytes(const Matrix& images, std::size_t side_rows, std::size_t side_cols) {
  if (side_rows * side_cols != images.cols())
    fail(ErrorCode::ShapeMismatch, "idx_image_bytes: " + std::to_string(side_rows) + "x" + std::to_string(side_cols) +
                                       " does not cover " + std::to_string(images.cols()) + " columns");
  std::vector<unsigned char> b;
  put_be32(b, kIdxImageMagic);
  put_be32(b, static_cast<std::uint32_t>(images.rows()));
  put_be32(b, static_cast<std::uint32_t>(side_rows));
  put_be32(b, static_cast<std::uint32_t>(side_cols));
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::InvalidArgument, "idx_image_bytes: pixel outside [0,1]");
    b.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  return b;
}

std::vector<unsigned char> idx_label_bytes(const std::vector<int>& labels) {
  std::vector<unsigned char> b;
  put_be32(b, kIdxLabelMagic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l >= 10) fail(ErrorCode::InvalidArgument, "idx_label_bytes: label outside [0,10)");
    b.push_back(static_cast<unsigned char>(l));
  }
  return b;
}

Dataset make_dataset(Matrix images, std::vector<int> labels, std::string name, std::string split) {
  if (images.rows() != labels.size())
    fail(ErrorCode::ShapeMismatch, "dataset has " + std::to_string(images.rows()) + " images but " +
                                       std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= 10) fail(ErrorCode::InvalidArgument, "label outside [0,10)");
  for (double v : images.values())
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::InvalidArgument, "pixel outside [0,1]");
  return Dataset{std::move(images), std::move(labels), std::move(name), std::move(split)};
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, std::string name,
                         std::string split) {
  return make_dataset(load_idx_images(images_path), load_idx_labels(labels_path), std::move(name), std::move(split));
}

namespace {

constexpr std::uint64_t kPrototypeWorld = 0x70726f746f747970ULL;
constexpr double kPrototypeNorm = 2.0;

Matrix prototypes(std::uint64_t set, std::size_t classes, std::size_t d) {
  Rng rng = Rng::child(kPrototypeWorld, set);
  Matrix p = gaussian(classes, d, 1.0, rng);
  for (std::size_t k = 0; k < classes; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += p(k, j) * p(k, j);
    const double scale = kPrototypeNorm / std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) p(k, j) *= scale;
  }
  return p;
}

}  // namespace

Dataset synthetic_dataset(std::uint64_t seed, std::size_t n_samples, std::size_t d, std::size_t classes,
                          const SyntheticTask& task) {
  if (classes == 0 || classes > 10) fail(ErrorCode::InvalidArgument, "synthetic_dataset: classes must be in [1,10]");
  if (n_samples < classes) fail(ErrorCode::InvalidArgument, "synthetic_dataset: need at least one sample per class");
  if (!(task.second_set_weight >= 0.0 && task.second_set_weight <= 1.0))
    fail(ErrorCode::InvalidArgument, "synthetic_dataset: second_set_weight must be in [0,1]");
  Matrix protos = prototypes(0, classes, d);
  if (task.second_set_weight > 0.0) {
    Matrix second = prototypes(1, classes, d);
    protos *= 1.0 - task.second_set_weight;
    second *= task.second_set_weight;
    protos += second;
  }
  Rng rng(seed);
  std::vector<int> cls(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) cls[i] = static_cast<int>(i % classes);
  const std::vector<std::size_t> perm = permutation(n_samples, rng);
  std::vector<int> shuffled(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) shuffled[i] = cls[perm[i]];

  Matrix images(n_samples, d);
  std::vector<int> labels(n_samples);
  const int shift = ((task.label_shift % static_cast<int>(classes)) + static_cast<int>(classes)) % static_cast<int>(classes);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const int k = shuffled[i];
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.5 * protos(static_cast<std::size_t>(k), j) + 0.2 * rng.normal();
      v = std::clamp(v, 0.0, 1.0);
      images(i, j) = std::round(v * 255.0) / 255.0;  // representable as an 8-bit pixel
    }
    labels[i] = (k + shift) % static_cast<int>(classes);
  }
  return Dataset{std::move(images), std::move(labels), "synthetic", ""};
}

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& rows) {
  const std::size_t d = ds.dim(), b = rows.size();
  Batch out;
  out.x = Matrix(d, b);
  out.labels.resize(b);
  for (std::size_t c = 0; c < b; ++c) {
    const std::size_t r = rows[c];
    if (r >= ds.size()) fail(ErrorCode::InvalidArgument, "gather_batch: row index out of range");
    const double* src = ds.images.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) out.x(j, c) = src[j];
    out.labels[c] = ds.labels[r];
  }
  return out;
}

Batch as_batch(const Dataset& ds) {
  Batch out;
  out.x = transpose(ds.images);
  out.labels = ds.labels;
  return out;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch, std::uint64_t seed)
    : ds_(&ds), batch_(batch), rng_(seed) {
  if (batch == 0 || batch > ds.size())
    fail(ErrorCode::InvalidArgument, "batch size " + std::to_string(batch) + " must be in [1, " +
                                         std::to_string(ds.size()) + "]");
  reshuffle();
}

void BatchIterator::reshuffle() {
  order_ = permutation(ds_->size(), rng_);
  pos_ = 0;
}

std::optional<std::vector<std::size_t>> BatchIterator::next_rows() {
  if (exhausted_) {
    exhausted_ = false;
    ++epoch_;
    reshuffle();
  }
  if (pos_ >= order_.size()) {
    exhausted_ = true;
    return std::nullopt;
  }
  const std::size_t take = std::min(batch_, order_.size() - pos_);
  std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                order_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
  pos_ += take;
  return rows;
}

std::vector<std::size_t> BatchIterator::next_rows_cycle() {
  auto rows = next_rows();
  if (!rows) rows = next_rows();
  return std::move(*rows);
}

std::optional<Batch> BatchIterator::next() {
  auto rows = next_rows();
  if (!rows) return std::nullopt;
  return gather_batch(*ds_, *rows);
}

Batch BatchIterator::next_cycle() { return gather_batch(*ds_, next_rows_cycle()); }

}  // namespace loradyn
