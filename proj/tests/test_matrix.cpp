#include <catch2/catch_amalgamated.hpp>

#include "permprune/matrix.hpp"
#include "permprune/rng.hpp"

using namespace permprune;

namespace {

// Independent reference product, plain i-j-k loops.
Matrix matmul_reference(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul identity") {
  Matrix m(2, 2, {1, 2, 3, 4});
  REQUIRE(matmul(Matrix::identity(2), m) == m);
}

TEST_CASE("matmul projector") {
  Matrix proj(2, 2, {1, 0, 0, 0});
  Matrix m(2, 2, {5, 6, 7, 8});
  Matrix expected(2, 2, {5, 6, 0, 0});
  REQUIRE(matmul(proj, m) == expected);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  Matrix a = rng.gaussian_matrix(3, 4);
  Matrix b = rng.gaussian_matrix(4, 2);
  REQUIRE(max_abs_diff(matmul(a, b), matmul_reference(a, b)) == 0.0);
}

TEST_CASE("matmul 16x16 relative error vs oracle") {
  Rng rng(11);
  Matrix a = rng.gaussian_matrix(16, 16);
  Matrix b = rng.gaussian_matrix(16, 16);
  Matrix got = matmul(a, b);
  Matrix want = matmul_reference(a, b);
  for (std::size_t i = 0; i < got.size(); ++i) {
    double denom = std::max(1.0, std::abs(want.data()[i]));
    REQUIRE(std::abs(got.data()[i] - want.data()[i]) / denom <= 1e-12);
  }
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  Matrix a(3, 4), b(5, 2);
  REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("3x4") &&
                                        Catch::Matchers::ContainsSubstring("5x2"));
}

TEST_CASE("perm_to_matrix identity and swap") {
  REQUIRE(perm_to_matrix(PermIndex::identity(3)) == Matrix::identity(3));
  PermIndex swap({std::vector<std::size_t>{1, 0}});
  REQUIRE(perm_to_matrix(swap) == Matrix(2, 2, {0, 1, 1, 0}));
}

TEST_CASE("perm_to_matrix is orthogonal and doubly stochastic with 0/1 entries") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PermIndex p = rng.permutation(8);
    Matrix pm = perm_to_matrix(p);
    REQUIRE(max_abs_diff(matmul(pm, transpose(pm)), Matrix::identity(8)) == 0.0);
    for (std::size_t i = 0; i < pm.size(); ++i)
      REQUIRE((pm.data()[i] == 0.0 || pm.data()[i] == 1.0));
    for (std::size_t i = 0; i < 8; ++i) {
      double row = 0.0, col = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        row += pm(i, j);
        col += pm(j, i);
      }
      REQUIRE(row == 1.0);
      REQUIRE(col == 1.0);
    }
  }
}

TEST_CASE("perm_invert") {
  REQUIRE(perm_invert(PermIndex::identity(3)) == PermIndex::identity(3));
  PermIndex p({std::vector<std::size_t>{2, 0, 1}});
  PermIndex expected({std::vector<std::size_t>{1, 2, 0}});
  REQUIRE(perm_invert(p) == expected);
  REQUIRE(perm_invert(perm_invert(p)) == p);
}

TEST_CASE("compose with inverse is identity") {
  Rng rng(5);
  PermIndex p = rng.permutation(16);
  REQUIRE(perm_compose(p, perm_invert(p)) == PermIndex::identity(16));
  REQUIRE(perm_compose(perm_invert(p), p) == PermIndex::identity(16));
}

TEST_CASE("perm_apply_rows basics") {
  Matrix m(2, 2, {1, 2, 3, 4});
  REQUIRE(perm_apply_rows(PermIndex::identity(2), m) == m);
  PermIndex swap({std::vector<std::size_t>{1, 0}});
  REQUIRE(perm_apply_rows(swap, m) == Matrix(2, 2, {3, 4, 1, 2}));
}

TEST_CASE("gathers agree with explicit permutation-matrix products") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    PermIndex p = rng.permutation(8);
    Matrix m = rng.gaussian_matrix(8, 8);
    Matrix pm = perm_to_matrix(p);
    REQUIRE(max_abs_diff(perm_apply_rows(p, m), matmul(pm, m)) == 0.0);
    REQUIRE(max_abs_diff(perm_apply_cols(p, m), matmul(m, transpose(pm))) == 0.0);
  }
}

TEST_CASE("gather composed with inverse gather is exact identity") {
  Rng rng(17);
  PermIndex p = rng.permutation(12);
  Matrix m = rng.gaussian_matrix(12, 5);
  REQUIRE(perm_apply_rows(p, perm_apply_rows(perm_invert(p), m)) == m);
  Matrix mc = rng.gaussian_matrix(5, 12);
  REQUIRE(perm_apply_cols(p, perm_apply_cols(perm_invert(p), mc)) == mc);
}

TEST_CASE("invalid permutations are rejected") {
  PermIndex dup({std::vector<std::size_t>{0, 0, 1}});
  REQUIRE_FALSE(dup.is_valid());
  REQUIRE_THROWS_AS(perm_to_matrix(dup), std::invalid_argument);
  PermIndex oob({std::vector<std::size_t>{0, 3}});
  REQUIRE_FALSE(oob.is_valid());
}

TEST_CASE("dimension mismatch in gathers") {
  Matrix m(3, 4);
  REQUIRE_THROWS_AS(perm_apply_rows(PermIndex::identity(4), m), std::invalid_argument);
  REQUIRE_THROWS_AS(perm_apply_cols(PermIndex::identity(3), m), std::invalid_argument);
}
