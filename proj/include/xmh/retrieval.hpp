#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmh/datamodel.hpp"
#include "xmh/networks.hpp"

namespace xmh {

// m codes of K bits; bit k of a code is 1 for +1 and 0 for -1.
class HashCodeMatrix {
 public:
  HashCodeMatrix() = default;
  HashCodeMatrix(std::size_t count, std::size_t bits);

  // Elementwise sign of real values, sign(0) = +1.
  static HashCodeMatrix from_real(const Matrix& values);
  Matrix to_signs() const;

  std::size_t size() const { return count_; }
  std::size_t bits() const { return bits_; }
  std::size_t words_per_code() const { return words_; }

  std::span<const std::uint64_t> code(std::size_t i) const { return {data_.data() + i * words_, words_}; }
  bool bit(std::size_t i, std::size_t k) const { return (data_[i * words_ + k / 64] >> (k % 64)) & 1U; }
  void set_bit(std::size_t i, std::size_t k, bool value);

  HashCodeMatrix gather(std::span<const std::size_t> indices) const;

  friend bool operator==(const HashCodeMatrix&, const HashCodeMatrix&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t bits_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> data_;
};

std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);
std::size_t hamming(const HashCodeMatrix& a, std::size_t i, const HashCodeMatrix& b, std::size_t j);

enum class Modality : std::uint8_t { kImage, kText, kLabel };

Modality parse_modality(const std::string& name);
std::string modality_name(Modality m);

// sign(f(x; theta)) for every row of `inputs`.
HashCodeMatrix encode(const Model& model, Modality modality, const Matrix& inputs);
HashCodeMatrix encode(const Model& model, Modality modality, const Dataset& dataset);

void save_codes(const HashCodeMatrix& codes, const std::filesystem::path& path);
HashCodeMatrix load_codes(const std::filesystem::path& path);

// Database indices ordered by (Hamming distance, index).
std::vector<std::size_t> hamming_ranking(const HashCodeMatrix& queries, std::size_t q,
                                         const HashCodeMatrix& db);

struct MapResult {
  double map = 0.0;
  std::size_t skipped_queries = 0;  // queries with no relevant item at all
};

// AP over the ranked list (or its first top_r entries), averaged over queries
// that have at least one relevant item.
MapResult mean_average_precision(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                                 const SimilarityMatrix& relevance,
                                 std::optional<std::size_t> top_r = std::nullopt,
                                 std::size_t threads = 1);

double precision_at_n(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                      const SimilarityMatrix& relevance, std::size_t n, std::size_t threads = 1);

struct PrPoint {
  std::size_t radius = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// Hash lookup within radius r = 0..K. Empty retrievals count as precision 1.
// Queries without relevant items are excluded.
std::vector<PrPoint> pr_by_radius(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                                  const SimilarityMatrix& relevance, std::size_t threads = 1);

struct RetrievalResult {
  double map = 0.0;
  std::size_t skipped_queries = 0;
  std::vector<std::pair<std::size_t, double>> precision_at;
  std::vector<PrPoint> pr_curve;
};

struct EvalOptions {
  std::optional<std::size_t> top_r;
  std::vector<std::size_t> p_at_n;
  std::size_t threads = 1;
};

RetrievalResult evaluate_retrieval(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                                   const SimilarityMatrix& relevance, const EvalOptions& options);

}  // namespace xmh
