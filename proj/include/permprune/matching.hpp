#pragma once
// Bipartite matching: entropic Sinkhorn relaxation over the Birkhoff
// polytope, a geometric temperature schedule, exact assignment via an
// O(N^3) augmenting-path solver, and a factorial brute-force oracle.
//
// Cost convention: C[i][j] is the cost of placing source channel i at
// destination position j. A hard assignment is returned as a PermIndex
// (map[j] = source at destination j) with objective sum_j C[map[j]][j].

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "permprune/matrix.hpp"

namespace permprune {

struct SinkhornConfig {
  double epsilon = 1.0;
  std::size_t iterations = 50;
  // When set, marginals are rescaled to N instead of 1 (the literal
  // "P <- P * Size(C)[0]" variant). Default keeps unit marginals so the
  // output is doubly stochastic.
  bool rescale_by_n = false;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("SinkhornConfig: epsilon must be > 0");
    if (iterations < 1) throw std::invalid_argument("SinkhornConfig: iterations must be >= 1");
  }
};

struct SoftPermutation {
  Matrix p;  // N x N, nonnegative, row/col sums = 1 (or N with rescale_by_n)
};

namespace detail {

// logsumexp of (base[i*stride_i + j*stride_j] + shift[j]) over j in [0, n)
inline double lse_shifted(const double* base, std::size_t n, std::size_t stride,
                          const double* shift) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, base[j * stride] + shift[j]);
  if (!std::isfinite(mx)) return mx;  // all -inf
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(base[j * stride] + shift[j] - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Entropy-regularized matching: K = exp(-C/eps) kept in log form, scaling
// vectors updated T times as
//   log u <- -logsumexp(log K + log v, dim 1)
//   log v <- -logsumexp(log K^T + log u, dim 1)
// then P = Diag(u) K Diag(v), assembled entirely in the log domain.
inline SoftPermutation sinkhorn_solve(const Matrix& c, const SinkhornConfig& cfg) {
  cfg.validate();
  if (c.rows() != c.cols())
    throw std::invalid_argument("sinkhorn_solve: cost matrix must be square, got " +
                                c.shape_str());
  if (!c.is_finite()) throw std::invalid_argument("sinkhorn_solve: non-finite cost matrix");
  const std::size_t n = c.rows();

  Matrix log_k(n, n);
  for (std::size_t i = 0; i < c.size(); ++i) log_k.data()[i] = -c.data()[i] / cfg.epsilon;

  std::vector<double> log_u(n, 0.0), log_v(n, 0.0);
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      log_u[i] = -detail::lse_shifted(log_k.data() + i * n, n, 1, log_v.data());
    for (std::size_t j = 0; j < n; ++j)
      log_v[j] = -detail::lse_shifted(log_k.data() + j, n, n, log_u.data());
  }

  SoftPermutation out;
  out.p = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.p(i, j) = std::exp(log_k(i, j) + log_u[i] + log_v[j]);
  if (cfg.rescale_by_n) out.p = scaled(out.p, static_cast<double>(n));
  if (!out.p.is_finite())
    throw std::runtime_error("sinkhorn_solve: non-finite iterate (epsilon too small for the "
                             "cost scale)");
  return out;
}

// Geometric interpolation from eps_start at step 0 to eps_end at step total.
inline double anneal_schedule(std::size_t step, std::size_t total, double eps_start,
                              double eps_end) {
  if (!(eps_end > 0.0) || eps_start < eps_end)
    throw std::invalid_argument("anneal_schedule: need eps_start >= eps_end > 0");
  if (step > total) throw std::invalid_argument("anneal_schedule: step exceeds total");
  if (total == 0) return eps_start;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return eps_start * std::pow(eps_end / eps_start, t);
}

inline double assignment_cost(const Matrix& c, const PermIndex& p) {
  if (p.size() != c.rows()) throw std::invalid_argument("assignment_cost: size mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) s += c(p.map[j], j);
  return s;
}

// Exact minimum-cost assignment (Jonker-Volgenant style shortest augmenting
// paths with potentials). Deterministic: columns are scanned in fixed order,
// so ties resolve the same way for identical inputs.
inline PermIndex hungarian_solve(const Matrix& c) {
  if (c.rows() != c.cols())
    throw std::invalid_argument("hungarian_solve: cost matrix must be square, got " +
                                c.shape_str());
  if (!c.is_finite()) throw std::invalid_argument("hungarian_solve: non-finite cost matrix");
  const std::size_t n = c.rows();
  const double inf = std::numeric_limits<double>::infinity();

  // 1-based potentials; col_source[j] = row assigned to column j (0 = none).
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> col_source(n + 1, 0), way(n + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    col_source[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<std::uint8_t> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = col_source[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[col_source[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_source[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      col_source[j0] = col_source[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  PermIndex perm;
  perm.map.resize(n);
  for (std::size_t j = 1; j <= n; ++j) perm.map[j - 1] = col_source[j] - 1;
  perm.validate();
  return perm;
}

// Exhaustive minimum over all N! assignments; lexicographically smallest
// permutation wins ties. Test oracle only.
inline std::pair<PermIndex, double> brute_force_assign(const Matrix& c) {
  if (c.rows() != c.cols())
    throw std::invalid_argument("brute_force_assign: cost matrix must be square");
  const std::size_t n = c.rows();
  if (n > 9)
    throw std::invalid_argument("brute_force_assign: refusing N = " + std::to_string(n) +
                                " (limit 9)");
  std::vector<std::size_t> map(n);
  std::iota(map.begin(), map.end(), std::size_t{0});
  PermIndex best{map};
  double best_cost = assignment_cost(c, best);
  while (std::next_permutation(map.begin(), map.end())) {
    PermIndex cand{map};
    const double cost = assignment_cost(c, cand);
    if (cost < best_cost) {
      best_cost = cost;
      best = cand;
    }
  }
  return {best, best_cost};
}

// Row-argmax rounding when it happens to be a bijection, otherwise exact
// assignment on -log(P). Always a valid bijection.
inline PermIndex round_to_hard(const SoftPermutation& soft) {
  const Matrix& p = soft.p;
  if (p.rows() != p.cols())
    throw std::invalid_argument("round_to_hard: soft permutation must be square");
  const std::size_t n = p.rows();

  std::vector<std::size_t> dest_of_source(n);
  std::vector<std::uint8_t> taken(n, 0);
  bool bijective = true;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (p(i, j) > p(i, best)) best = j;
    dest_of_source[i] = best;
    if (taken[best]) bijective = false;
    taken[best] = 1;
  }
  if (bijective) {
    PermIndex out;
    out.map.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.map[dest_of_source[i]] = i;
    return out;
  }

  Matrix neg_log(n, n);
  for (std::size_t i = 0; i < p.size(); ++i)
    neg_log.data()[i] = -std::log(std::max(p.data()[i], 1e-300));
  return hungarian_solve(neg_log);
}

}  // namespace permprune
