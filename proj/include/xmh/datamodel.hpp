#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xmh/ndcore.hpp"

namespace xmh {

// Row-major n x c matrix of 0/1 label indicators.
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t classes);
  LabelMatrix(std::size_t rows, std::size_t classes, std::vector<std::uint8_t> bits);

  std::size_t rows() const { return rows_; }
  std::size_t classes() const { return classes_; }
  std::uint8_t& operator()(std::size_t r, std::size_t c) { return bits_[r * classes_ + c]; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits_[r * classes_ + c]; }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return {bits_.data() + r * classes_, classes_};
  }
  std::span<const std::uint8_t> bits() const { return bits_; }

  LabelMatrix gather_rows(std::span<const std::size_t> indices) const;
  Matrix to_matrix() const;

  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t classes_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct InstanceView {
  std::span<const double> image_feature;
  std::span<const double> text_feature;
  std::span<const std::uint8_t> labels;
};

struct DatasetDims {
  std::size_t n = 0, image_dim = 0, text_dim = 0, classes = 0;
  friend bool operator==(const DatasetDims&, const DatasetDims&) = default;
};

// n cross-modal instances stored column-wise as V (n x d_v), T (n x d_t) and
// L (n x c). Immutable once constructed.
class Dataset {
 public:
  Dataset(Matrix images, Matrix texts, LabelMatrix labels);

  DatasetDims dims() const;
  std::size_t size() const { return labels_.rows(); }
  InstanceView instance(std::size_t i) const;

  const Matrix& images() const { return images_; }
  const Matrix& texts() const { return texts_; }
  const LabelMatrix& labels() const { return labels_; }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Matrix images_;
  Matrix texts_;
  LabelMatrix labels_;
};

// Bit-packed binary matrix, S(i, j) = 1 iff row i of A and row j of B share a label.
class SimilarityMatrix {
 public:
  SimilarityMatrix(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const {
    return (words_[i * words_per_row_ + j / 64] >> (j % 64)) & 1U;
  }
  void set(std::size_t i, std::size_t j, bool value);
  std::size_t row_count(std::size_t i) const;
  Matrix to_matrix() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::size_t words_per_row_;
  std::vector<std::uint64_t> words_;
};

SimilarityMatrix build_similarity(const LabelMatrix& a, const LabelMatrix& b);

struct SynthOptions {
  std::size_t n = 500;
  std::size_t classes = 4;
  std::size_t image_dim = 64;
  std::size_t text_dim = 128;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

// Class-prototype mixture data: every instance activates 1-3 labels; its image
// feature is the sum of the active image prototypes plus Gaussian noise, its
// text feature a clamped non-negative bag with class-conditioned bumps.
Dataset synth_dataset(const SynthOptions& options);

// Rows [begin, end) as a new dataset.
Dataset slice_dataset(const Dataset& dataset, std::size_t begin, std::size_t end);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace xmh
