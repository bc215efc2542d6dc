#pragma once
// Saliency metrics and N:M mask generation. Saliency is either plain weight
// magnitude or the activation-aware score |W_ij| * ||X_j||_2; masks keep the
// n_keep highest-saliency entries within every run of m_group consecutive
// entries along the input dimension of each row. Ties break toward the
// lowest index so results are reproducible.

#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "permprune/matrix.hpp"

namespace permprune {

struct NMPattern {
  std::size_t n_keep = 2;
  std::size_t m_group = 4;

  void validate() const {
    if (n_keep < 1 || n_keep > m_group)
      throw std::invalid_argument("NMPattern: need 1 <= n_keep <= m_group, got " +
                                  std::to_string(n_keep) + ":" + std::to_string(m_group));
  }
  bool keeps_all() const { return n_keep == m_group; }
};

struct NMMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;  // row-major

  NMMask() = default;
  NMMask(std::size_t r, std::size_t c) : rows(r), cols(c), keep(r * c, 0) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return keep[r * cols + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return keep[r * cols + c]; }

  Matrix to_matrix() const {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < keep.size(); ++i) m.data()[i] = keep[i] ? 1.0 : 0.0;
    return m;
  }

  bool operator==(const NMMask& o) const {
    return rows == o.rows && cols == o.cols && keep == o.keep;
  }
};

enum class SaliencyKind { Magnitude, Wanda };

struct SaliencySpec {
  SaliencyKind kind = SaliencyKind::Magnitude;
  std::optional<std::vector<double>> act_norms;  // ||X_j||_2 per input channel

  static SaliencySpec magnitude() { return {SaliencyKind::Magnitude, std::nullopt}; }
  static SaliencySpec wanda(std::vector<double> norms) {
    return {SaliencyKind::Wanda, std::move(norms)};
  }
};

inline Matrix saliency(const Matrix& w, const SaliencySpec& spec) {
  Matrix out(w.rows(), w.cols());
  if (spec.kind == SaliencyKind::Magnitude) {
    for (std::size_t i = 0; i < w.size(); ++i) out.data()[i] = std::abs(w.data()[i]);
    return out;
  }
  if (!spec.act_norms)
    throw std::invalid_argument("saliency: Wanda requires activation norms");
  const auto& norms = *spec.act_norms;
  if (norms.size() != w.cols())
    throw std::invalid_argument("saliency: act_norms length " + std::to_string(norms.size()) +
                                " vs weight " + w.shape_str());
  for (const double n : norms)
    if (!(n >= 0.0)) throw std::invalid_argument("saliency: act_norms must be nonnegative");
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) = std::abs(w(r, c)) * norms[c];
  return out;
}

// Per contiguous group of m_group entries in each row, keep the n_keep
// largest-saliency positions (lowest index wins on ties).
inline NMMask nm_mask(const Matrix& sal, NMPattern pattern) {
  pattern.validate();
  if (sal.cols() % pattern.m_group != 0)
    throw std::invalid_argument("nm_mask: row length " + std::to_string(sal.cols()) +
                                " not divisible by m_group " + std::to_string(pattern.m_group));
  NMMask mask(sal.rows(), sal.cols());
  std::vector<std::size_t> order(pattern.m_group);
  for (std::size_t r = 0; r < sal.rows(); ++r) {
    for (std::size_t g = 0; g < sal.cols(); g += pattern.m_group) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sal(r, g + a) > sal(r, g + b);
      });
      for (std::size_t k = 0; k < pattern.n_keep; ++k) mask.at(r, g + order[k]) = 1;
    }
  }
  return mask;
}

inline double retained_saliency(const Matrix& sal, const NMMask& mask) {
  if (sal.rows() != mask.rows || sal.cols() != mask.cols)
    throw std::invalid_argument("retained_saliency: shape mismatch (" + sal.shape_str() +
                                " vs " + Matrix::shape_str(mask.rows, mask.cols) + ")");
  double total = 0.0;
  for (std::size_t i = 0; i < sal.size(); ++i)
    if (mask.keep[i]) total += sal.data()[i];
  return total;
}

inline Matrix apply_mask(const Matrix& w, const NMMask& mask) {
  if (w.rows() != mask.rows || w.cols() != mask.cols)
    throw std::invalid_argument("apply_mask: shape mismatch (" + w.shape_str() + " vs " +
                                Matrix::shape_str(mask.rows, mask.cols) + ")");
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i)
    out.data()[i] = mask.keep[i] ? w.data()[i] : 0.0;
  return out;
}

// Structural check: exactly n_keep kept entries in every m_group-sized run.
inline bool mask_satisfies(const NMMask& mask, NMPattern pattern,
                           std::size_t* bad_row = nullptr, std::size_t* bad_group = nullptr) {
  pattern.validate();
  if (mask.cols % pattern.m_group != 0) return false;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t g = 0; g < mask.cols; g += pattern.m_group) {
      std::size_t kept = 0;
      for (std::size_t k = 0; k < pattern.m_group; ++k) kept += mask.at(r, g + k);
      if (kept != pattern.n_keep) {
        if (bad_row) *bad_row = r;
        if (bad_group) *bad_group = g / pattern.m_group;
        return false;
      }
    }
  }
  return true;
}

}  // namespace permprune
