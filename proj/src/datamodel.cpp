#include "xmh/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "xmh/errors.hpp"

namespace xmh {

LabelMatrix::LabelMatrix(std::size_t rows, std::size_t classes)
    : rows_(rows), classes_(classes), bits_(rows * classes, 0) {}

LabelMatrix::LabelMatrix(std::size_t rows, std::size_t classes, std::vector<std::uint8_t> bits)
    : rows_(rows), classes_(classes), bits_(std::move(bits)) {
  if (bits_.size() != rows * classes) throw ShapeError("LabelMatrix: payload size mismatch");
  for (auto b : bits_) {
    if (b > 1) throw ContractError("LabelMatrix: label entries must be 0 or 1");
  }
}

LabelMatrix LabelMatrix::gather_rows(std::span<const std::size_t> indices) const {
  LabelMatrix out(indices.size(), classes_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw ShapeError("LabelMatrix::gather_rows: index out of range");
    std::copy_n(bits_.begin() + static_cast<std::ptrdiff_t>(indices[i] * classes_), classes_,
                out.bits_.begin() + static_cast<std::ptrdiff_t>(i * classes_));
  }
  return out;
}

Matrix LabelMatrix::to_matrix() const {
  Matrix m(rows_, classes_);
  for (std::size_t i = 0; i < bits_.size(); ++i) m.data()[i] = bits_[i];
  return m;
}

Dataset::Dataset(Matrix images, Matrix texts, LabelMatrix labels)
    : images_(std::move(images)), texts_(std::move(texts)), labels_(std::move(labels)) {
  const std::size_t n = labels_.rows();
  if (images_.rows() != n || texts_.rows() != n) {
    throw ShapeError("Dataset: row counts differ (V " + images_.shape_string() + ", T " +
                     texts_.shape_string() + ", L " + std::to_string(n) + " rows)");
  }
  if (n < 2) throw ContractError("Dataset: need at least 2 instances");
  for (std::size_t i = 0; i < n; ++i) {
    auto row = labels_.row(i);
    if (std::none_of(row.begin(), row.end(), [](std::uint8_t b) { return b == 1; })) {
      throw ContractError("Dataset: instance " + std::to_string(i) + " has no active label");
    }
  }
  for (double v : texts_.data()) {
    if (v < 0.0) throw ContractError("Dataset: text features must be non-negative");
  }
}

DatasetDims Dataset::dims() const {
  return {labels_.rows(), images_.cols(), texts_.cols(), labels_.classes()};
}

InstanceView Dataset::instance(std::size_t i) const {
  if (i >= size()) throw ContractError("Dataset::instance: index out of range");
  return {images_.row(i), texts_.row(i), labels_.row(i)};
}

SimilarityMatrix::SimilarityMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), words_per_row_((cols + 63) / 64), words_(rows * words_per_row_, 0) {}

void SimilarityMatrix::set(std::size_t i, std::size_t j, bool value) {
  std::uint64_t& w = words_[i * words_per_row_ + j / 64];
  const std::uint64_t bit = std::uint64_t{1} << (j % 64);
  w = value ? (w | bit) : (w & ~bit);
}

std::size_t SimilarityMatrix::row_count(std::size_t i) const {
  std::size_t total = 0;
  for (std::size_t w = 0; w < words_per_row_; ++w) {
    total += static_cast<std::size_t>(std::popcount(words_[i * words_per_row_ + w]));
  }
  return total;
}

Matrix SimilarityMatrix::to_matrix() const {
  Matrix m(rows_, cols_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j) ? 1.0 : 0.0;
  }
  return m;
}

SimilarityMatrix build_similarity(const LabelMatrix& a, const LabelMatrix& b) {
  if (a.classes() != b.classes()) {
    throw ShapeError("build_similarity: label widths differ (" + std::to_string(a.classes()) +
                     " vs " + std::to_string(b.classes()) + ")");
  }
  SimilarityMatrix s(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto li = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto lj = b.row(j);
      bool shared = false;
      for (std::size_t k = 0; k < li.size() && !shared; ++k) shared = (li[k] & lj[k]) != 0;
      if (shared) s.set(i, j, true);
    }
  }
  return s;
}

Dataset synth_dataset(const SynthOptions& o) {
  if (o.n < 2 || o.classes < 2 || o.image_dim < o.classes || o.text_dim < o.classes) {
    throw ContractError("synth_dataset: require n >= 2, c >= 2, d_v >= c, d_t >= c");
  }
  if (!(o.noise >= 0.0)) throw ContractError("synth_dataset: noise must be non-negative");

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Image prototypes: dense Gaussian directions, one per class.
  Matrix image_protos(o.classes, o.image_dim);
  for (double& v : image_protos.data()) v = gauss(rng);

  // Text prototypes: each class owns a disjoint block of vocabulary with
  // positive weights; words outside every block stay background.
  Matrix text_protos(o.classes, o.text_dim);
  std::vector<std::size_t> vocab(o.text_dim);
  std::iota(vocab.begin(), vocab.end(), std::size_t{0});
  std::shuffle(vocab.begin(), vocab.end(), rng);
  const std::size_t block = o.text_dim / o.classes;
  for (std::size_t k = 0; k < o.classes; ++k) {
    for (std::size_t w = 0; w < block; ++w) text_protos(k, vocab[k * block + w]) = 0.5 + unit(rng);
  }

  const std::size_t max_labels = std::min<std::size_t>(3, o.classes);
  std::uniform_int_distribution<std::size_t> cardinality(1, max_labels);
  std::vector<std::size_t> classes(o.classes);
  std::iota(classes.begin(), classes.end(), std::size_t{0});

  Matrix images(o.n, o.image_dim);
  Matrix texts(o.n, o.text_dim);
  LabelMatrix labels(o.n, o.classes);
  for (std::size_t i = 0; i < o.n; ++i) {
    std::shuffle(classes.begin(), classes.end(), rng);
    const std::size_t active = cardinality(rng);
    auto v = images.row(i);
    auto t = texts.row(i);
    for (std::size_t a = 0; a < active; ++a) {
      const std::size_t k = classes[a];
      labels(i, k) = 1;
      auto vp = image_protos.row(k);
      auto tp = text_protos.row(k);
      for (std::size_t d = 0; d < v.size(); ++d) v[d] += vp[d];
      // Each topic word appears with probability 0.7.
      for (std::size_t d = 0; d < t.size(); ++d) {
        const bool present = unit(rng) < 0.7;
        if (present) t[d] += tp[d];
      }
    }
    for (double& x : v) x += o.noise * gauss(rng);
    for (double& x : t) x = std::max(0.0, x + o.noise * gauss(rng));
  }
  return Dataset(std::move(images), std::move(texts), std::move(labels));
}

Dataset slice_dataset(const Dataset& dataset, std::size_t begin, std::size_t end) {
  if (begin > end || end > dataset.size()) throw ContractError("slice_dataset: bad range");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return Dataset(dataset.images().gather_rows(idx), dataset.texts().gather_rows(idx),
                 dataset.labels().gather_rows(idx));
}

namespace {
constexpr std::string_view kDatasetMagic = "XMHD";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const DatasetDims d = dataset.dims();
  io::Writer w;
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.n));
  w.u32(static_cast<std::uint32_t>(d.image_dim));
  w.u32(static_cast<std::uint32_t>(d.text_dim));
  w.u32(static_cast<std::uint32_t>(d.classes));
  w.f64s(dataset.images().data());
  w.f64s(dataset.texts().data());
  w.bytes(dataset.labels().bits());
  w.write_to(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  r.expect_magic(kDatasetMagic);
  if (const auto version = r.u32("version"); version != kDatasetVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  const std::size_t n = r.u32("n");
  const std::size_t dv = r.u32("d_v");
  const std::size_t dt = r.u32("d_t");
  const std::size_t c = r.u32("c");
  if (n < 2) r.fail("field n = " + std::to_string(n) + " (need at least 2)");
  if (dv == 0) r.fail("field d_v is zero");
  if (dt == 0) r.fail("field d_t is zero");
  if (c == 0) r.fail("field c is zero");
  const std::size_t expected = n * (dv + dt) * sizeof(double) + n * c;
  if (r.remaining() < expected) r.fail("truncated payload for declared dims");

  Matrix images(n, dv);
  Matrix texts(n, dt);
  std::vector<std::uint8_t> bits(n * c);
  r.f64s(images.data(), "V");
  r.f64s(texts.data(), "T");
  r.bytes(bits, "L");
  r.expect_end();
  for (auto b : bits) {
    if (b > 1) r.fail("field L contains a value other than 0/1");
  }
  try {
    return Dataset(std::move(images), std::move(texts), LabelMatrix(n, c, std::move(bits)));
  } catch (const std::logic_error& e) {
    r.fail(e.what());
  }
}

}  // namespace xmh
