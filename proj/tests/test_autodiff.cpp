#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "permprune/autodiff.hpp"
#include "permprune/matching.hpp"
#include "permprune/rng.hpp"

using namespace permprune;
using namespace permprune::ad;

TEST_CASE("add with zero passes the upstream gradient through") {
  Tape tape;
  NodeId x = tape.leaf(Matrix(2, 3, 1.5));
  NodeId y = tape.add(x, tape.constant(Matrix(2, 3)));
  tape.backward(tape.sum_all(y));
  REQUIRE(tape.grad(x) == Matrix(2, 3, 1.0));
}

TEST_CASE("matmul adjoints match the closed form") {
  Rng rng(3);
  Matrix av = rng.gaussian_matrix(3, 4);
  Matrix bv = rng.gaussian_matrix(4, 2);
  Tape tape;
  NodeId a = tape.leaf(av);
  NodeId b = tape.leaf(bv);
  NodeId c = tape.matmul(a, b);
  tape.backward(tape.sum_all(c));
  // Seed grad G is all-ones: grad(A) = G B^T, grad(B) = A^T G.
  Matrix ones(3, 2, 1.0);
  REQUIRE(max_abs_diff(tape.grad(a), matmul(ones, transpose(bv))) <= 1e-14);
  REQUIRE(max_abs_diff(tape.grad(b), matmul(transpose(av), ones)) <= 1e-14);
}

TEST_CASE("matmul transpose flags agree with explicit transposes") {
  Rng rng(5);
  Matrix av = rng.gaussian_matrix(3, 4);
  Matrix bv = rng.gaussian_matrix(3, 5);
  Tape tape;
  NodeId a = tape.constant(av);
  NodeId b = tape.constant(bv);
  REQUIRE(max_abs_diff(tape.value(tape.matmul(a, b, true, false)),
                       matmul(transpose(av), bv)) == 0.0);
  Matrix cv = rng.gaussian_matrix(5, 4);
  NodeId c = tape.constant(cv);
  REQUIRE(max_abs_diff(tape.value(tape.matmul(a, c, false, true)),
                       matmul(av, transpose(cv))) == 0.0);
  Matrix dv = rng.gaussian_matrix(7, 3);
  NodeId d = tape.constant(dv);
  REQUIRE(max_abs_diff(tape.value(tape.matmul(b, d, true, true)),
                       matmul(transpose(bv), transpose(dv))) == 0.0);
}

TEST_CASE("matmul transpose-flag gradients match finite differences") {
  Rng rng(41);
  for (int mode = 0; mode < 4; ++mode) {
    const bool ta = mode & 1, tb = mode & 2;
    Matrix av = ta ? rng.gaussian_matrix(4, 3) : rng.gaussian_matrix(3, 4);
    Matrix bv = tb ? rng.gaussian_matrix(5, 4) : rng.gaussian_matrix(4, 5);
    auto program = [&](Tape& t, const std::vector<NodeId>& p) {
      NodeId prod = t.matmul(p[0], p[1], ta, tb);  // always 3x5
      return t.sum_all(t.mul(prod, prod));
    };
    REQUIRE(finite_diff_check(program, {av, bv}, 1e-5) <= 1e-6);
  }
}

TEST_CASE("quadratic loss gradient is 2(A - B)") {
  Rng rng(7);
  Matrix av = rng.gaussian_matrix(3, 3);
  Matrix bv = rng.gaussian_matrix(3, 3);
  Tape tape;
  NodeId a = tape.leaf(av);
  NodeId d = tape.sub(a, tape.constant(bv));
  tape.backward(tape.sum_all(tape.mul(d, d)));
  REQUIRE(max_abs_diff(tape.grad(a), scaled(sub(av, bv), 2.0)) <= 1e-14);
}

TEST_CASE("sum of a leaf yields an all-ones gradient") {
  Tape tape;
  NodeId x = tape.leaf(Matrix(4, 5, 2.0));
  tape.backward(tape.sum_all(x));
  REQUIRE(tape.grad(x) == Matrix(4, 5, 1.0));
}

TEST_CASE("logsumexp adjoint is the softmax of its inputs") {
  Rng rng(11);
  Matrix xv = rng.gaussian_matrix(3, 6);
  Tape tape;
  NodeId x = tape.leaf(xv);
  tape.backward(tape.sum_all(tape.logsumexp(x, Reduce::PerRow)));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += std::exp(xv(r, c));
    for (std::size_t c = 0; c < 6; ++c)
      REQUIRE_THAT(tape.grad(x)(r, c),
                   Catch::Matchers::WithinRel(std::exp(xv(r, c)) / s, 1e-12));
  }
}

TEST_CASE("gather gradient is the inverse gather of the upstream gradient") {
  Rng rng(13);
  PermIndex p = rng.permutation(6);
  Matrix xv = rng.gaussian_matrix(6, 4);
  Matrix weights = rng.gaussian_matrix(6, 4);
  Tape tape;
  NodeId x = tape.leaf(xv);
  NodeId g = tape.gather_rows(x, p);
  tape.backward(tape.sum_all(tape.mul(g, tape.constant(weights))));
  // Upstream grad of the gathered node is `weights`; the leaf grad must be
  // its inverse gather, exactly.
  REQUIRE(tape.grad(x) == perm_apply_rows(perm_invert(p), weights));
}

TEST_CASE("masked-out entries receive exactly zero gradient") {
  Rng rng(17);
  Matrix xv = rng.gaussian_matrix(2, 4);
  NMMask mask(2, 4);
  mask.keep = {1, 0, 1, 0, 0, 1, 0, 1};
  Tape tape;
  NodeId x = tape.leaf(xv);
  NodeId y = tape.mask_mul(x, mask);
  tape.backward(tape.sum_all(tape.mul(y, y)));
  for (std::size_t i = 0; i < 8; ++i) {
    if (!mask.keep[i]) REQUIRE(tape.grad(x).data()[i] == 0.0);
  }
}

TEST_CASE("linear scalar program differentiates to machine precision") {
  std::vector<Matrix> params{Matrix(1, 1, {2.0})};
  double err = finite_diff_check(
      [](Tape& t, const std::vector<NodeId>& p) { return t.scale(p[0], 3.0); }, params, 1e-5);
  REQUIRE(err <= 1e-10);
}

TEST_CASE("random mixed-op graphs match finite differences") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a0 = rng.gaussian_matrix(3, 4);
    Matrix b0 = rng.gaussian_matrix(4, 3);
    PermIndex perm = rng.permutation(3);
    Matrix target = rng.gaussian_matrix(3, 3);
    NMMask mask(3, 3);
    for (auto& k : mask.keep) k = static_cast<std::uint8_t>(rng.index(2));
    std::uint64_t which = rng.next_u64();

    auto program = [&](Tape& t, const std::vector<NodeId>& p) {
      NodeId m = t.matmul(p[0], p[1]);  // 3x3
      m = t.add(m, t.constant(Matrix(3, 3, 0.3)));
      if (which & 1) m = t.softmax_rows(m);
      if (which & 2) m = t.silu(m);
      if (which & 4) m = t.gather_rows(m, perm);
      if (which & 8) m = t.mask_mul(m, mask);
      if (which & 16) m = t.mul(m, m);
      if (which & 32) m = t.exp(t.scale(m, 0.2));
      if (which & 64) m = t.neg(m);
      if (which & 128) m = t.add(m, t.logsumexp(m, Reduce::PerRow));
      if (which & 256) m = t.smooth_l1(m, target, 1.0);
      NodeId per_col = t.sum(m, Reduce::PerCol);
      return t.sum_all(t.mul(per_col, per_col));
    };
    double err = finite_diff_check(program, {a0, b0}, 1e-5);
    REQUIRE(err <= 1e-4);
  }
}

TEST_CASE("log differentiates correctly on positive inputs") {
  Rng rng(23);
  Matrix x(2, 3);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = 0.5 + rng.uniform();
  double err = finite_diff_check(
      [](Tape& t, const std::vector<NodeId>& p) { return t.sum_all(t.log(p[0])); }, {x}, 1e-6);
  REQUIRE(err <= 1e-6);
}

TEST_CASE("unrolled sinkhorn matches the standalone solver bit for bit") {
  Rng rng(29);
  Matrix c = rng.gaussian_matrix(6, 6);
  Tape tape;
  NodeId cost = tape.leaf(c);
  NodeId p = sinkhorn_unrolled(tape, cost, 0.5, 30);
  SoftPermutation ref = sinkhorn_solve(c, {0.5, 30, false});
  REQUIRE(tape.value(p) == ref.p);
}

TEST_CASE("sinkhorn-through-loss gradients match finite differences") {
  Rng rng(31);
  Matrix c0 = rng.gaussian_matrix(5, 5);
  Matrix weights = rng.gaussian_matrix(5, 5);
  auto program = [&](Tape& t, const std::vector<NodeId>& p) {
    NodeId soft = sinkhorn_unrolled(t, p[0], 0.5, 10);
    return t.sum_all(t.mul(soft, t.constant(weights)));
  };
  REQUIRE(finite_diff_check(program, {c0}, 1e-5) <= 1e-4);
}

TEST_CASE("deep sinkhorn unroll stays differentiable") {
  Rng rng(37);
  Matrix c0 = rng.gaussian_matrix(4, 4);
  Matrix weights = rng.gaussian_matrix(4, 4);
  auto program = [&](Tape& t, const std::vector<NodeId>& p) {
    NodeId soft = sinkhorn_unrolled(t, p[0], 0.2, 20);
    return t.sum_all(t.mul(soft, t.constant(weights)));
  };
  REQUIRE(finite_diff_check(program, {c0}, 1e-5) <= 1e-4);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  NodeId x = tape.leaf(Matrix(2, 2, 1.0));
  REQUIRE_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("shape mismatches are rejected at recording time") {
  Tape tape;
  NodeId a = tape.leaf(Matrix(2, 3));
  NodeId b = tape.leaf(Matrix(2, 2));
  REQUIRE_THROWS_AS(tape.mul(a, b), std::invalid_argument);
  REQUIRE_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
  REQUIRE_THROWS_AS(tape.mask_mul(a, Matrix(3, 2)), std::invalid_argument);
}
