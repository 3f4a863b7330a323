#include "xmh/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <thread>

#include "binary_io.hpp"
#include "xmh/errors.hpp"

namespace xmh {
namespace {

void require_compatible(const HashCodeMatrix& q, const HashCodeMatrix& db, const SimilarityMatrix& rel) {
  if (q.bits() != db.bits()) {
    throw ContractError("code length mismatch: queries K=" + std::to_string(q.bits()) + ", database K=" +
                        std::to_string(db.bits()));
  }
  if (db.size() == 0) throw ContractError("empty database");
  if (rel.rows() != q.size() || rel.cols() != db.size()) {
    throw ShapeError("relevance is " + std::to_string(rel.rows()) + "x" + std::to_string(rel.cols()) +
                     " but there are " + std::to_string(q.size()) + " queries and " +
                     std::to_string(db.size()) + " database items");
  }
}

// Runs fn(q) for every query, splitting the range over worker threads. Each
// query writes only its own output slot.
template <typename Fn>
void for_each_query(std::size_t count, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t q = 0; q < count; ++q) fn(q);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([=] {
      for (std::size_t q = begin; q < end; ++q) fn(q);
    });
  }
  for (auto& th : pool) th.join();
}

std::vector<std::size_t> distances(const HashCodeMatrix& queries, std::size_t q, const HashCodeMatrix& db) {
  std::vector<std::size_t> d(db.size());
  const auto qc = queries.code(q);
  for (std::size_t j = 0; j < db.size(); ++j) d[j] = hamming(qc, db.code(j));
  return d;
}

}  // namespace

HashCodeMatrix::HashCodeMatrix(std::size_t count, std::size_t bits)
    : count_(count), bits_(bits), words_((bits + 63) / 64), data_(count * words_, 0) {
  if (bits == 0) throw ContractError("HashCodeMatrix: code length must be positive");
}

HashCodeMatrix HashCodeMatrix::from_real(const Matrix& values) {
  HashCodeMatrix codes(values.rows(), values.cols());
  for (std::size_t i = 0; i < values.rows(); ++i) {
    for (std::size_t k = 0; k < values.cols(); ++k) codes.set_bit(i, k, values(i, k) >= 0.0);
  }
  return codes;
}

Matrix HashCodeMatrix::to_signs() const {
  Matrix out(count_, bits_);
  for (std::size_t i = 0; i < count_; ++i) {
    for (std::size_t k = 0; k < bits_; ++k) out(i, k) = bit(i, k) ? 1.0 : -1.0;
  }
  return out;
}

void HashCodeMatrix::set_bit(std::size_t i, std::size_t k, bool value) {
  std::uint64_t& w = data_[i * words_ + k / 64];
  const std::uint64_t mask = std::uint64_t{1} << (k % 64);
  w = value ? (w | mask) : (w & ~mask);
}

HashCodeMatrix HashCodeMatrix::gather(std::span<const std::size_t> indices) const {
  HashCodeMatrix out(indices.size(), bits_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= count_) throw ContractError("HashCodeMatrix::gather: index out of range");
    std::ranges::copy(code(indices[i]), out.data_.begin() + static_cast<std::ptrdiff_t>(i * words_));
  }
  return out;
}

std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) throw ContractError("hamming: code lengths differ");
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
  return d;
}

std::size_t hamming(const HashCodeMatrix& a, std::size_t i, const HashCodeMatrix& b, std::size_t j) {
  if (a.bits() != b.bits()) {
    throw ContractError("hamming: K=" + std::to_string(a.bits()) + " vs K=" + std::to_string(b.bits()));
  }
  return hamming(a.code(i), b.code(j));
}

Modality parse_modality(const std::string& name) {
  if (name == "img" || name == "image") return Modality::kImage;
  if (name == "txt" || name == "text") return Modality::kText;
  if (name == "lab" || name == "label") return Modality::kLabel;
  throw ContractError("unknown modality '" + name + "' (expected img, txt or lab)");
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kImage: return "img";
    case Modality::kText: return "txt";
    case Modality::kLabel: return "lab";
  }
  return "?";
}

HashCodeMatrix encode(const Model& model, Modality modality, const Matrix& inputs) {
  const Network& net = modality == Modality::kImage  ? model.image
                       : modality == Modality::kText ? model.text
                                                     : model.label;
  if (modality == Modality::kLabel) {
    return HashCodeMatrix::from_real(labnet_forward(model, inputs).hash);
  }
  return HashCodeMatrix::from_real(evaluate_generator(net, inputs, model.shape.code_length).hash);
}

HashCodeMatrix encode(const Model& model, Modality modality, const Dataset& dataset) {
  const DatasetDims d = dataset.dims();
  if (d.classes != model.shape.classes || d.image_dim != model.shape.image_dim ||
      d.text_dim != model.shape.text_dim) {
    throw FormatError("dataset dims (d_v=" + std::to_string(d.image_dim) + ", d_t=" +
                      std::to_string(d.text_dim) + ", c=" + std::to_string(d.classes) +
                      ") do not match the checkpoint (d_v=" + std::to_string(model.shape.image_dim) +
                      ", d_t=" + std::to_string(model.shape.text_dim) +
                      ", c=" + std::to_string(model.shape.classes) + ")");
  }
  switch (modality) {
    case Modality::kImage: return encode(model, modality, dataset.images());
    case Modality::kText: return encode(model, modality, dataset.texts());
    case Modality::kLabel: return encode(model, modality, dataset.labels().to_matrix());
  }
  return {};
}

namespace {
constexpr std::string_view kCodesMagic = "XMHC";
constexpr std::uint32_t kCodesVersion = 1;
}  // namespace

void save_codes(const HashCodeMatrix& codes, const std::filesystem::path& path) {
  io::Writer w;
  w.magic(kCodesMagic);
  w.u32(kCodesVersion);
  w.u32(static_cast<std::uint32_t>(codes.size()));
  w.u32(static_cast<std::uint32_t>(codes.bits()));
  const std::size_t bytes = (codes.bits() + 7) / 8;
  std::vector<std::uint8_t> packed(bytes);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::ranges::fill(packed, 0);
    for (std::size_t k = 0; k < codes.bits(); ++k) {
      if (codes.bit(i, k)) packed[k / 8] |= static_cast<std::uint8_t>(1U << (k % 8));
    }
    w.bytes(packed);
  }
  w.write_to(path);
}

HashCodeMatrix load_codes(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  r.expect_magic(kCodesMagic);
  if (const auto version = r.u32("version"); version != kCodesVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  const std::size_t m = r.u32("m");
  const std::size_t k = r.u32("K");
  if (k == 0) r.fail("field K is zero");
  const std::size_t bytes = (k + 7) / 8;
  if (r.remaining() != m * bytes) r.fail("payload size does not match m and K");
  HashCodeMatrix codes(m, k);
  std::vector<std::uint8_t> packed(bytes);
  for (std::size_t i = 0; i < m; ++i) {
    r.bytes(packed, "codes");
    for (std::size_t b = 0; b < k; ++b) codes.set_bit(i, b, (packed[b / 8] >> (b % 8)) & 1U);
    if (k % 8 != 0 && (packed.back() >> (k % 8)) != 0) r.fail("nonzero padding bits in code " + std::to_string(i));
  }
  return codes;
}

std::vector<std::size_t> hamming_ranking(const HashCodeMatrix& queries, std::size_t q, const HashCodeMatrix& db) {
  if (queries.bits() != db.bits()) throw ContractError("hamming_ranking: code length mismatch");
  const std::vector<std::size_t> d = distances(queries, q, db);
  // Counting sort on distance keeps index order within equal distances.
  std::vector<std::size_t> start(db.bits() + 2, 0);
  for (std::size_t v : d) ++start[v + 1];
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<std::size_t> order(db.size());
  for (std::size_t j = 0; j < d.size(); ++j) order[start[d[j]]++] = j;
  return order;
}

MapResult mean_average_precision(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                                 const SimilarityMatrix& relevance, std::optional<std::size_t> top_r,
                                 std::size_t threads) {
  require_compatible(queries, db, relevance);
  const std::size_t cutoff = top_r ? std::min(*top_r, db.size()) : db.size();
  if (top_r && *top_r == 0) throw ContractError("mean_average_precision: top_r must be positive");

  // -1 marks a skipped query.
  std::vector<double> ap(queries.size());
  for_each_query(queries.size(), threads, [&](std::size_t q) {
    if (relevance.row_count(q) == 0) {
      ap[q] = -1.0;
      return;
    }
    const auto order = hamming_ranking(queries, q, db);
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t pos = 0; pos < cutoff; ++pos) {
      if (relevance(q, order[pos])) {
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
      }
    }
    ap[q] = hits == 0 ? 0.0 : sum / static_cast<double>(hits);
  });

  MapResult result;
  double total = 0.0;
  std::size_t counted = 0;
  for (double v : ap) {
    if (v < 0.0) {
      ++result.skipped_queries;
    } else {
      total += v;
      ++counted;
    }
  }
  result.map = counted == 0 ? 0.0 : total / static_cast<double>(counted);
  return result;
}

double precision_at_n(const HashCodeMatrix& queries, const HashCodeMatrix& db, const SimilarityMatrix& relevance,
                      std::size_t n, std::size_t threads) {
  require_compatible(queries, db, relevance);
  if (n == 0 || n > db.size()) {
    throw ContractError("precision_at_n: n=" + std::to_string(n) + " outside [1, " + std::to_string(db.size()) + "]");
  }
  if (queries.size() == 0) return 0.0;
  std::vector<double> p(queries.size());
  for_each_query(queries.size(), threads, [&](std::size_t q) {
    const auto order = hamming_ranking(queries, q, db);
    std::size_t hits = 0;
    for (std::size_t pos = 0; pos < n; ++pos) hits += relevance(q, order[pos]) ? 1 : 0;
    p[q] = static_cast<double>(hits) / static_cast<double>(n);
  });
  return std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(queries.size());
}

std::vector<PrPoint> pr_by_radius(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                                  const SimilarityMatrix& relevance, std::size_t threads) {
  require_compatible(queries, db, relevance);
  const std::size_t k = db.bits();
  // Per query: (precision, recall) at every radius; skipped queries stay empty.
  std::vector<std::vector<PrPoint>> per(queries.size());
  for_each_query(queries.size(), threads, [&](std::size_t q) {
    const std::size_t relevant = relevance.row_count(q);
    if (relevant == 0) return;
    std::vector<std::size_t> retrieved_at(k + 1, 0);
    std::vector<std::size_t> hits_at(k + 1, 0);
    const auto d = distances(queries, q, db);
    for (std::size_t j = 0; j < d.size(); ++j) {
      ++retrieved_at[d[j]];
      if (relevance(q, j)) ++hits_at[d[j]];
    }
    std::vector<PrPoint> points(k + 1);
    std::size_t retrieved = 0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r <= k; ++r) {
      retrieved += retrieved_at[r];
      hits += hits_at[r];
      points[r] = {r, retrieved == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(retrieved),
                   static_cast<double>(hits) / static_cast<double>(relevant)};
    }
    per[q] = std::move(points);
  });

  std::vector<PrPoint> curve(k + 1);
  std::size_t counted = 0;
  for (std::size_t r = 0; r <= k; ++r) curve[r].radius = r;
  for (const auto& points : per) {
    if (points.empty()) continue;
    ++counted;
    for (std::size_t r = 0; r <= k; ++r) {
      curve[r].precision += points[r].precision;
      curve[r].recall += points[r].recall;
    }
  }
  if (counted > 0) {
    for (auto& p : curve) {
      p.precision /= static_cast<double>(counted);
      p.recall /= static_cast<double>(counted);
    }
  }
  return curve;
}

RetrievalResult evaluate_retrieval(const HashCodeMatrix& queries, const HashCodeMatrix& db,
                                   const SimilarityMatrix& relevance, const EvalOptions& options) {
  RetrievalResult out;
  const MapResult m = mean_average_precision(queries, db, relevance, options.top_r, options.threads);
  out.map = m.map;
  out.skipped_queries = m.skipped_queries;
  for (std::size_t n : options.p_at_n) {
    out.precision_at.emplace_back(n, precision_at_n(queries, db, relevance, n, options.threads));
  }
  out.pr_curve = pr_by_radius(queries, db, relevance, options.threads);
  return out;
}

}  // namespace xmh
