#pragma once

// Test-only helpers: brute-force oracles written independently of the
// library code paths, a central finite-difference gradient checker, and
// random generators for property tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "xmh/datamodel.hpp"
#include "xmh/ndcore.hpp"
#include "xmh/retrieval.hpp"

namespace xmh::testing {

using Signs = std::vector<std::vector<int>>;  // rows of +1/-1

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -2.0,
                            double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

inline LabelMatrix random_labels(std::mt19937_64& rng, std::size_t n, std::size_t c, double p = 0.35) {
  std::bernoulli_distribution on(p);
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  LabelMatrix l(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t k = 0; k < c; ++k) {
      l(i, k) = on(rng) ? 1 : 0;
      any = any || l(i, k);
    }
    if (!any) l(i, pick(rng)) = 1;
  }
  return l;
}

inline Signs random_signs(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::bernoulli_distribution coin(0.5);
  Signs s(n, std::vector<int>(k));
  for (auto& row : s) {
    for (int& v : row) v = coin(rng) ? 1 : -1;
  }
  return s;
}

inline HashCodeMatrix pack(const Signs& s, std::size_t k) {
  Matrix m(s.size(), k);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) m(i, j) = s[i][j];
  }
  return HashCodeMatrix::from_real(m);
}

// ---------------------------------------------------------------------------
// Oracles

inline int oracle_hamming(const std::vector<int>& a, const std::vector<int>& b) {
  int dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return (static_cast<int>(a.size()) - dot) / 2;
}

inline std::vector<std::vector<int>> oracle_similarity(const LabelMatrix& a, const LabelMatrix& b) {
  std::vector<std::vector<int>> s(a.rows(), std::vector<int>(b.rows(), 0));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      int dot = 0;
      for (std::size_t k = 0; k < a.classes(); ++k) dot += a(i, k) * b(j, k);
      s[i][j] = dot >= 1 ? 1 : 0;
    }
  }
  return s;
}

// Ranking by full comparison sort on (distance, index).
inline std::vector<std::size_t> oracle_rank(const std::vector<int>& q, const Signs& db) {
  std::vector<std::pair<int, std::size_t>> keyed;
  for (std::size_t j = 0; j < db.size(); ++j) keyed.emplace_back(oracle_hamming(q, db[j]), j);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> order;
  for (const auto& [d, j] : keyed) order.push_back(j);
  return order;
}

struct OracleMap {
  double map;
  std::size_t skipped;
};

inline OracleMap oracle_map(const Signs& q, const Signs& db, const std::vector<std::vector<int>>& rel,
                            std::size_t top_r) {
  double total = 0.0;
  std::size_t counted = 0, skipped = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (std::accumulate(rel[i].begin(), rel[i].end(), 0) == 0) {
      ++skipped;
      continue;
    }
    const auto order = oracle_rank(q[i], db);
    std::vector<double> precisions;
    for (std::size_t pos = 0; pos < std::min(top_r, order.size()); ++pos) {
      if (rel[i][order[pos]]) {
        std::size_t hits = 0;
        for (std::size_t p = 0; p <= pos; ++p) hits += rel[i][order[p]];
        precisions.push_back(static_cast<double>(hits) / static_cast<double>(pos + 1));
      }
    }
    double ap = 0.0;
    for (double p : precisions) ap += p;
    ap = precisions.empty() ? 0.0 : ap / static_cast<double>(precisions.size());
    total += ap;
    ++counted;
  }
  return {counted ? total / static_cast<double>(counted) : 0.0, skipped};
}

inline double oracle_p_at_n(const Signs& q, const Signs& db, const std::vector<std::vector<int>>& rel,
                            std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto order = oracle_rank(q[i], db);
    double hits = 0.0;
    for (std::size_t p = 0; p < n; ++p) hits += rel[i][order[p]];
    total += hits / static_cast<double>(n);
  }
  return total / static_cast<double>(q.size());
}

inline std::vector<std::pair<double, double>> oracle_pr(const Signs& q, const Signs& db,
                                                        const std::vector<std::vector<int>>& rel,
                                                        std::size_t k) {
  std::vector<std::pair<double, double>> curve(k + 1, {0.0, 0.0});
  std::size_t counted = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const int relevant = std::accumulate(rel[i].begin(), rel[i].end(), 0);
    if (relevant == 0) continue;
    ++counted;
    for (std::size_t r = 0; r <= k; ++r) {
      int retrieved = 0, hits = 0;
      for (std::size_t j = 0; j < db.size(); ++j) {
        if (oracle_hamming(q[i], db[j]) <= static_cast<int>(r)) {
          ++retrieved;
          hits += rel[i][j];
        }
      }
      curve[r].first += retrieved == 0 ? 1.0 : static_cast<double>(hits) / retrieved;
      curve[r].second += static_cast<double>(hits) / relevant;
    }
  }
  for (auto& p : curve) {
    p.first /= static_cast<double>(counted);
    p.second /= static_cast<double>(counted);
  }
  return curve;
}

// -sum_ij (S_ij * t - log(1 + e^t)), t = <a_i, b_j> / 2, with the naive log.
inline double oracle_pairwise_nll(const Matrix& a, const Matrix& b, const Matrix& s) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double t = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) t += a(i, k) * b(j, k);
      t *= 0.5;
      total -= s(i, j) * t - std::log(1.0 + std::exp(t));
    }
  }
  return total;
}

inline double oracle_squared_diff(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) total += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::size_t checked_entries = 0;
  std::size_t kink_entries = 0;  // excluded: the +/-step interval straddles a ReLU hinge
};

// `value` recomputes the loss from the current parameter storage; `analytic`
// holds (storage, gradient) pairs. For every parameter matrix up to `samples`
// entries are perturbed by +/-step and the normwise relative error
// |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|) over the sampled
// entries is reported (worst over matrices). Matrices whose sampled gradients
// are both below 1e-9 in norm count as exact zeros.
//
// An entry whose forward and backward one-sided differences disagree by more
// than 1e-3 relative sits on a non-differentiable point, where no finite
// difference is meaningful; it is excluded and counted in kink_entries.
inline GradCheckResult check_gradients(const std::function<double()>& value,
                                       const std::vector<std::pair<Matrix*, Matrix>>& analytic,
                                       std::mt19937_64& rng, std::size_t samples = 24,
                                       double step = 1e-5) {
  GradCheckResult result;
  const double base = value();
  for (const auto& [target, grad] : analytic) {
    std::vector<std::size_t> idx(target->size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(samples, idx.size()));
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t e : idx) {
      double& p = target->data()[e];
      const double saved = p;
      p = saved + step;
      const double up = value();
      p = saved - step;
      const double down = value();
      p = saved;
      const double forward = (up - base) / step;
      const double backward = (base - down) / step;
      if (std::abs(forward - backward) > 1e-3 * std::max(std::abs(forward), std::abs(backward)) + 1e-7) {
        ++result.kink_entries;
        continue;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double a = grad.data()[e];
      diff += (a - numeric) * (a - numeric);
      norm_a += a * a;
      norm_n += numeric * numeric;
      ++result.checked_entries;
    }
    const double scale = std::sqrt(std::max(norm_a, norm_n));
    const double err = scale < 1e-9 ? 0.0 : std::sqrt(diff) / scale;
    result.worst_relative_error = std::max(result.worst_relative_error, err);
  }
  return result;
}

}  // namespace xmh::testing
