#pragma once
// Deterministic random helpers. Gaussian sampling is hand-rolled (Box-Muller
// over the raw 64-bit stream) so that streams are reproducible across
// standard-library implementations, not just across runs.

#include <cstdint>
#include <cmath>
#include <random>

#include "permprune/matrix.hpp"

namespace permprune {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

  PermIndex permutation(std::size_t n) {
    PermIndex p = PermIndex::identity(n);
    for (std::size_t i = n; i > 1; --i) std::swap(p.map[i - 1], p.map[index(i)]);
    return p;
  }

  Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * gaussian();
    return m;
  }

  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = uniform(lo, hi);
    return m;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace permprune
