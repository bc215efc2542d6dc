#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "permprune/matching.hpp"
#include "permprune/rng.hpp"

using namespace permprune;

namespace {

void check_marginals(const Matrix& p, double target, double tol) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      REQUIRE(p(i, j) >= 0.0);
      row += p(i, j);
      col += p(j, i);
    }
    REQUIRE_THAT(row, Catch::Matchers::WithinAbs(target, tol));
    REQUIRE_THAT(col, Catch::Matchers::WithinAbs(target, tol));
  }
}

double soft_cost(const Matrix& c, const Matrix& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += c.data()[i] * p.data()[i];
  return s;
}

}  // namespace

TEST_CASE("sinkhorn on a uniform cost matrix is the uniform matrix") {
  Matrix c(4, 4, 3.7);
  SoftPermutation p = sinkhorn_solve(c, {0.5, 30, false});
  for (std::size_t i = 0; i < p.p.size(); ++i)
    REQUIRE_THAT(p.p.data()[i], Catch::Matchers::WithinAbs(0.25, 1e-9));
}

TEST_CASE("sinkhorn 2x2 fixed point favors the cheap diagonal") {
  Matrix c(2, 2, {0, 10, 10, 0});
  SoftPermutation p = sinkhorn_solve(c, {0.1, 50, false});
  REQUIRE(max_abs_diff(p.p, Matrix::identity(2)) <= 1e-4);
}

TEST_CASE("sinkhorn marginals on random costs") {
  // Well-scaled regime: cost spread comparable to the temperature.
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    for (double eps : {0.05, 0.5, 5.0}) {
      Matrix c = rng.gaussian_matrix(8, 8, eps / 4.0);
      SoftPermutation p = sinkhorn_solve(c, {eps, 50, false});
      check_marginals(p.p, 1.0, 1e-6);
    }
  }
}

TEST_CASE("sinkhorn rescale variant scales marginals to N") {
  Rng rng(43);
  Matrix c = rng.gaussian_matrix(6, 6);
  SoftPermutation p = sinkhorn_solve(c, {0.5, 50, true});
  check_marginals(p.p, 6.0, 6e-6);
}

TEST_CASE("sinkhorn rejects non-square input") {
  REQUIRE_THROWS_AS(sinkhorn_solve(Matrix(2, 3), {1.0, 10, false}), std::invalid_argument);
}

TEST_CASE("anneal schedule endpoints and geometric midpoint") {
  REQUIRE(anneal_schedule(0, 10, 1.0, 0.01) == 1.0);
  REQUIRE_THAT(anneal_schedule(10, 10, 1.0, 0.01), Catch::Matchers::WithinRel(0.01, 1e-12));
  REQUIRE_THAT(anneal_schedule(5, 10, 1.0, 0.01), Catch::Matchers::WithinRel(0.1, 1e-12));
}

TEST_CASE("anneal schedule is monotone non-increasing") {
  double prev = anneal_schedule(0, 100, 2.0, 0.05);
  for (std::size_t s = 1; s <= 100; ++s) {
    double e = anneal_schedule(s, 100, 2.0, 0.05);
    REQUIRE(e <= prev + 1e-15);
    prev = e;
  }
}

TEST_CASE("hungarian picks the zero-cost diagonal") {
  Matrix c(3, 3, 1.0);
  for (std::size_t i = 0; i < 3; ++i) c(i, i) = 0.0;
  REQUIRE(hungarian_solve(c) == PermIndex::identity(3));
}

TEST_CASE("hungarian forced anti-diagonal") {
  Matrix c(2, 2, {1, 0, 0, 1});
  PermIndex p = hungarian_solve(c);
  REQUIRE(p.map == std::vector<std::size_t>{1, 0});
  REQUIRE(assignment_cost(c, p) == 0.0);
}

TEST_CASE("hungarian on an all-zero matrix is the identity") {
  // Tie-break contract: uniform costs resolve to the identity assignment.
  for (std::size_t n : {2, 3, 5, 8, 16}) {
    REQUIRE(hungarian_solve(Matrix(n, n)) == PermIndex::identity(n));
  }
}

TEST_CASE("hungarian equals factorial brute force") {
  Rng rng(47);
  for (std::size_t n = 2; n <= 7; ++n) {
    for (int trial = 0; trial < 50; ++trial) {
      Matrix c = rng.gaussian_matrix(n, n);
      PermIndex h = hungarian_solve(c);
      auto [b, bc] = brute_force_assign(c);
      REQUIRE_THAT(assignment_cost(c, h), Catch::Matchers::WithinAbs(bc, 1e-9));
    }
  }
}

TEST_CASE("hungarian 1000 random 6x6 instances match brute force") {
  Rng rng(53);
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix c = rng.uniform_matrix(6, 6, 0.0, 1.0);
    REQUIRE_THAT(assignment_cost(c, hungarian_solve(c)),
                 Catch::Matchers::WithinAbs(brute_force_assign(c).second, 1e-9));
  }
}

TEST_CASE("brute force basics") {
  Matrix c1(1, 1, {4.2});
  auto [p1, c1v] = brute_force_assign(c1);
  REQUIRE(p1.map == std::vector<std::size_t>{0});
  REQUIRE(c1v == 4.2);

  Matrix c2(2, 2, {1, 0, 0, 1});
  auto [p2, c2v] = brute_force_assign(c2);
  REQUIRE(p2.map == std::vector<std::size_t>{1, 0});
  REQUIRE(c2v == 0.0);

  Rng rng(59);
  Matrix c5 = rng.gaussian_matrix(5, 5);
  auto [p5, c5v] = brute_force_assign(c5);
  REQUIRE(c5v <= assignment_cost(c5, PermIndex::identity(5)));

  REQUIRE_THROWS_AS(brute_force_assign(Matrix(10, 10)), std::invalid_argument);
}

TEST_CASE("round_to_hard on near-hard soft permutations") {
  REQUIRE(round_to_hard({Matrix::identity(3)}) == PermIndex::identity(3));

  Matrix near_i(2, 2, {0.95, 0.05, 0.05, 0.95});
  REQUIRE(round_to_hard({near_i}) == PermIndex::identity(2));

  // Row-argmax collision falls back to exact assignment.
  Matrix clash(2, 2, {0.6, 0.4, 0.9, 0.1});
  PermIndex p = round_to_hard({clash});
  REQUIRE(p.is_valid());
  REQUIRE(p.map == std::vector<std::size_t>{1, 0});  // optimal: sources 1->0, 0->1
}

TEST_CASE("annealed sinkhorn rounds to the exact optimum on clear instances") {
  Rng rng(61);
  int done = 0;
  while (done < 20) {
    const std::size_t n = 5 + rng.index(3);  // 5..7
    Matrix c = rng.uniform_matrix(n, n, 0.0, 4.0);
    auto [bp, bcost] = brute_force_assign(c);
    // Require a clear margin over the second-best assignment.
    double second = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> map(n);
    std::iota(map.begin(), map.end(), std::size_t{0});
    do {
      PermIndex cand{map};
      if (cand == bp) continue;
      second = std::min(second, assignment_cost(c, cand));
    } while (std::next_permutation(map.begin(), map.end()));
    if (second - bcost < 0.5) continue;
    ++done;

    SoftPermutation soft = sinkhorn_solve(c, {0.01, 100, false});
    PermIndex rounded = round_to_hard(soft);
    REQUIRE(rounded == hungarian_solve(c));
    REQUIRE_THAT(assignment_cost(c, rounded), Catch::Matchers::WithinAbs(bcost, 1e-9));
  }
}

TEST_CASE("soft cost is non-increasing along the anneal schedule") {
  Rng rng(67);
  int done = 0;
  while (done < 5) {
    Matrix c = rng.uniform_matrix(6, 6, 0.0, 4.0);
    auto [bp, bcost] = brute_force_assign(c);
    double second = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> map(6);
    std::iota(map.begin(), map.end(), std::size_t{0});
    do {
      PermIndex cand{map};
      if (cand == bp) continue;
      second = std::min(second, assignment_cost(c, cand));
    } while (std::next_permutation(map.begin(), map.end()));
    if (second - bcost < 0.5) continue;
    ++done;

    // Monotone soft cost along the schedule, run to convergence at each step.
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t step = 0; step <= 20; ++step) {
      const double eps = anneal_schedule(step, 20, 1.0, 0.1);
      SoftPermutation soft = sinkhorn_solve(c, {eps, 2000, false});
      const double sc = soft_cost(c, soft.p);
      REQUIRE(sc <= prev + 1e-8);
      prev = sc;
    }
    // Near the discrete optimum once the temperature is sharp.
    SoftPermutation sharp = sinkhorn_solve(c, {0.01, 1000, false});
    REQUIRE(std::abs(soft_cost(c, sharp.p) - bcost) <= 1e-3 * 6);
  }
}
