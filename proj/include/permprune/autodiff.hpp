#pragma once
// Minimal reverse-mode differentiation over dense matrices. A Tape is an
// append-only node store; forward values are computed eagerly and backward
// replays the nodes in reverse creation order (parents always precede
// children, so that order is a reverse topological sort).
//
// Masks enter through mask_mul as fixed 0/1 constants: the multiplication
// is differentiated, the mask-selection step is not (straight-through).
// Matmul carries transpose flags so P^T products never materialize a
// transposed parameter.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "permprune/matrix.hpp"
#include "permprune/sparsity.hpp"

namespace permprune::ad {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

enum class Op {
  Leaf,
  MatMul,
  Add,        // same shape, or broadcast of a 1xN row / Nx1 column vector
  Mul,        // elementwise
  Exp,
  Log,
  LogSumExp,  // per-row -> Nx1, or per-column -> 1xN
  Softmax,    // per-row
  Gather,     // rows or columns by index list
  Scale,
  Neg,
  SiLU,
  MaskMul,    // multiply by a constant 0/1 mask (straight-through)
  Sum,        // per-row, per-column, or all entries
  SmoothL1,   // elementwise Huber terms against a constant target
};

enum class Reduce { PerRow, PerCol, All };

struct Node {
  Op op = Op::Leaf;
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool needed = false;  // reachability mark used during backward
  std::array<NodeId, 2> parents{kNoNode, kNoNode};

  // op attributes
  double scalar = 0.0;                // Scale factor / SmoothL1 delta
  Reduce reduce = Reduce::All;        // LogSumExp / Sum
  bool trans_a = false, trans_b = false;  // MatMul
  bool gather_rows = true;            // Gather axis
  std::vector<std::size_t> indices;   // Gather
  Matrix aux;                         // MaskMul mask / SmoothL1 target
};

class Tape {
 public:
  NodeId leaf(Matrix v) { return push_leaf(std::move(v), true); }
  NodeId constant(Matrix v) { return push_leaf(std::move(v), false); }
  NodeId constant_scalar(double v) { return push_leaf(Matrix(1, 1, {v}), false); }

  const Matrix& value(NodeId id) const { return at(id).value; }
  const Matrix& grad(NodeId id) const {
    const Node& n = at(id);
    if (n.grad.size() == 0)
      throw std::logic_error("Tape::grad: node has no gradient (run backward first)");
    return n.grad;
  }
  std::size_t size() const { return nodes_.size(); }

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    const std::size_t m = trans_a ? av.cols() : av.rows();
    const std::size_t ka = trans_a ? av.rows() : av.cols();
    const std::size_t kb = trans_b ? bv.cols() : bv.rows();
    const std::size_t n = trans_b ? bv.rows() : bv.cols();
    if (ka != kb)
      throw std::invalid_argument("tape matmul: dimension mismatch (" + av.shape_str() +
                                  (trans_a ? "^T" : "") + " vs " + bv.shape_str() +
                                  (trans_b ? "^T" : "") + ")");
    Matrix out(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < ka; ++k) {
        const double x = trans_a ? av(k, i) : av(i, k);
        if (x == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j)
          out(i, j) += x * (trans_b ? bv(j, k) : bv(k, j));
      }
    Node node;
    node.op = Op::MatMul;
    node.parents = {a, b};
    node.trans_a = trans_a;
    node.trans_b = trans_b;
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId add(NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    Matrix out(av.rows(), av.cols());
    if (av.same_shape(bv)) {
      for (std::size_t i = 0; i < av.size(); ++i)
        out.data()[i] = av.data()[i] + bv.data()[i];
    } else if (bv.rows() == 1 && bv.cols() == av.cols()) {
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) + bv(0, c);
    } else if (bv.cols() == 1 && bv.rows() == av.rows()) {
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) + bv(r, 0);
    } else {
      throw std::invalid_argument("tape add: incompatible shapes (" + av.shape_str() + " vs " +
                                  bv.shape_str() + ")");
    }
    Node node;
    node.op = Op::Add;
    node.parents = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId sub(NodeId a, NodeId b) { return add(a, neg(b)); }

  NodeId mul(NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (!av.same_shape(bv))
      throw std::invalid_argument("tape mul: shape mismatch (" + av.shape_str() + " vs " +
                                  bv.shape_str() + ")");
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
    Node node;
    node.op = Op::Mul;
    node.parents = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId exp(NodeId a) {
    return unary(Op::Exp, a, [](double x) { return std::exp(x); });
  }

  NodeId log(NodeId a) {
    return unary(Op::Log, a, [](double x) { return std::log(x); });
  }

  NodeId neg(NodeId a) {
    return unary(Op::Neg, a, [](double x) { return -x; });
  }

  NodeId scale(NodeId a, double s) {
    NodeId id = unary(Op::Scale, a, [s](double x) { return s * x; });
    nodes_[id].scalar = s;
    return id;
  }

  NodeId silu(NodeId a) {
    return unary(Op::SiLU, a, [](double x) { return x / (1.0 + std::exp(-x)); });
  }

  NodeId logsumexp(NodeId a, Reduce reduce) {
    if (reduce == Reduce::All)
      throw std::invalid_argument("tape logsumexp: use PerRow or PerCol");
    const Matrix& av = value(a);
    Matrix out = reduce == Reduce::PerRow ? Matrix(av.rows(), 1) : Matrix(1, av.cols());
    if (reduce == Reduce::PerRow) {
      for (std::size_t r = 0; r < av.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < av.cols(); ++c) mx = std::max(mx, av(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < av.cols(); ++c) s += std::exp(av(r, c) - mx);
        out(r, 0) = mx + std::log(s);
      }
    } else {
      for (std::size_t c = 0; c < av.cols(); ++c) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < av.rows(); ++r) mx = std::max(mx, av(r, c));
        double s = 0.0;
        for (std::size_t r = 0; r < av.rows(); ++r) s += std::exp(av(r, c) - mx);
        out(0, c) = mx + std::log(s);
      }
    }
    Node node;
    node.op = Op::LogSumExp;
    node.parents = {a, kNoNode};
    node.reduce = reduce;
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId softmax_rows(NodeId a) {
    const Matrix& av = value(a);
    Matrix out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < av.cols(); ++c) mx = std::max(mx, av(r, c));
      double s = 0.0;
      for (std::size_t c = 0; c < av.cols(); ++c) s += std::exp(av(r, c) - mx);
      for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = std::exp(av(r, c) - mx) / s;
    }
    Node node;
    node.op = Op::Softmax;
    node.parents = {a, kNoNode};
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId gather(NodeId a, std::vector<std::size_t> indices, bool rows) {
    const Matrix& av = value(a);
    const std::size_t limit = rows ? av.rows() : av.cols();
    for (std::size_t i : indices)
      if (i >= limit) throw std::invalid_argument("tape gather: index out of range");
    Matrix out = rows ? Matrix(indices.size(), av.cols()) : Matrix(av.rows(), indices.size());
    if (rows) {
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(indices[r], c);
    } else {
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < indices.size(); ++c) out(r, c) = av(r, indices[c]);
    }
    Node node;
    node.op = Op::Gather;
    node.parents = {a, kNoNode};
    node.gather_rows = rows;
    node.indices = std::move(indices);
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId gather_rows(NodeId a, const PermIndex& p) { return gather(a, p.map, true); }
  NodeId gather_cols(NodeId a, const PermIndex& p) { return gather(a, p.map, false); }

  NodeId mask_mul(NodeId a, const NMMask& mask) { return mask_mul(a, mask.to_matrix()); }

  NodeId mask_mul(NodeId a, Matrix mask01) {
    const Matrix& av = value(a);
    if (!av.same_shape(mask01))
      throw std::invalid_argument("tape mask_mul: shape mismatch (" + av.shape_str() + " vs " +
                                  mask01.shape_str() + ")");
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i)
      out.data()[i] = av.data()[i] * mask01.data()[i];
    Node node;
    node.op = Op::MaskMul;
    node.parents = {a, kNoNode};
    node.aux = std::move(mask01);
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId sum(NodeId a, Reduce reduce) {
    const Matrix& av = value(a);
    Matrix out;
    if (reduce == Reduce::All) {
      double s = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i];
      out = Matrix(1, 1, {s});
    } else if (reduce == Reduce::PerRow) {
      out = Matrix(av.rows(), 1);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, 0) += av(r, c);
    } else {
      out = Matrix(1, av.cols());
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
    }
    Node node;
    node.op = Op::Sum;
    node.parents = {a, kNoNode};
    node.reduce = reduce;
    node.value = std::move(out);
    return push(std::move(node));
  }

  NodeId sum_all(NodeId a) { return sum(a, Reduce::All); }

  // Elementwise Huber terms h(a - target): 0.5 d^2 / delta for |d| <= delta,
  // |d| - 0.5 delta otherwise.
  NodeId smooth_l1(NodeId a, Matrix target, double delta) {
    const Matrix& av = value(a);
    if (!av.same_shape(target))
      throw std::invalid_argument("tape smooth_l1: shape mismatch (" + av.shape_str() + " vs " +
                                  target.shape_str() + ")");
    if (!(delta > 0.0)) throw std::invalid_argument("tape smooth_l1: delta must be > 0");
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = av.data()[i] - target.data()[i];
      out.data()[i] = std::abs(d) <= delta ? 0.5 * d * d / delta : std::abs(d) - 0.5 * delta;
    }
    Node node;
    node.op = Op::SmoothL1;
    node.parents = {a, kNoNode};
    node.scalar = delta;
    node.aux = std::move(target);
    node.value = std::move(out);
    return push(std::move(node));
  }

  // Reverse sweep from a scalar loss. Each node is visited exactly once;
  // only nodes lying on a path from the loss to a trainable leaf carry
  // gradients, so frozen-constant branches cost nothing. Trainable leaves
  // the loss does not depend on receive exact zero gradients.
  void backward(NodeId loss) {
    Node& ln = at(loss);
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw std::invalid_argument("backward: loss must be scalar (1x1), got " +
                                  ln.value.shape_str());

    // Which nodes have a trainable leaf somewhere beneath them.
    std::vector<std::uint8_t> reaches_param(loss + 1, 0);
    for (std::size_t i = 0; i <= loss; ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::Leaf) {
        reaches_param[i] = n.requires_grad ? 1 : 0;
        continue;
      }
      for (NodeId p : n.parents)
        if (p != kNoNode && reaches_param[p]) reaches_param[i] = 1;
    }

    for (auto& n : nodes_) {
      n.needed = false;
      n.grad = Matrix();
    }
    ln.needed = true;
    for (std::size_t i = loss + 1; i-- > 0;) {
      if (!nodes_[i].needed) continue;
      for (NodeId p : nodes_[i].parents)
        if (p != kNoNode && reaches_param[p]) nodes_[p].needed = true;
    }
    for (auto& n : nodes_)
      if (n.needed || (n.op == Op::Leaf && n.requires_grad))
        n.grad = Matrix(n.value.rows(), n.value.cols());
    ln.grad(0, 0) = 1.0;

    for (std::size_t i = loss + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needed || n.op == Op::Leaf) continue;
      propagate(n);
    }
  }

 private:
  std::vector<Node> nodes_;

  Node& at(NodeId id) {
    if (id >= nodes_.size()) throw std::logic_error("Tape: bad node id");
    return nodes_[id];
  }
  const Node& at(NodeId id) const {
    if (id >= nodes_.size()) throw std::logic_error("Tape: bad node id");
    return nodes_[id];
  }

  NodeId push_leaf(Matrix v, bool trainable) {
    if (!v.is_finite()) throw std::invalid_argument("Tape: non-finite leaf value");
    Node node;
    node.op = Op::Leaf;
    node.requires_grad = trainable;
    node.value = std::move(v);
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  NodeId push(Node node) {
    node.requires_grad = false;
    for (NodeId p : node.parents)
      if (p != kNoNode && at(p).requires_grad) node.requires_grad = true;
    // interior nodes propagate regardless; requires_grad only gates leaves
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  template <typename F>
  NodeId unary(Op op, NodeId a, F f) {
    const Matrix& av = value(a);
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out.data()[i] = f(av.data()[i]);
    Node node;
    node.op = op;
    node.parents = {a, kNoNode};
    node.value = std::move(out);
    return push(std::move(node));
  }

  void propagate(Node& n) {
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        Node& a = at(n.parents[0]);
        Node& b = at(n.parents[1]);
        if (a.needed) accum_matmul_grad_a(a.grad, g, b.value, n.trans_a, n.trans_b);
        if (b.needed) accum_matmul_grad_b(b.grad, g, a.value, n.trans_a, n.trans_b);
        break;
      }
      case Op::Add: {
        Node& a = at(n.parents[0]);
        Node& b = at(n.parents[1]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i) a.grad.data()[i] += g.data()[i];
        if (b.needed) {
          if (b.value.same_shape(g)) {
            for (std::size_t i = 0; i < g.size(); ++i) b.grad.data()[i] += g.data()[i];
          } else if (b.value.rows() == 1) {
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < g.cols(); ++c) b.grad(0, c) += g(r, c);
          } else {
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < g.cols(); ++c) b.grad(r, 0) += g(r, c);
          }
        }
        break;
      }
      case Op::Mul: {
        Node& a = at(n.parents[0]);
        Node& b = at(n.parents[1]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad.data()[i] += g.data()[i] * b.value.data()[i];
        if (b.needed)
          for (std::size_t i = 0; i < g.size(); ++i)
            b.grad.data()[i] += g.data()[i] * a.value.data()[i];
        break;
      }
      case Op::Exp: {
        Node& a = at(n.parents[0]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad.data()[i] += g.data()[i] * n.value.data()[i];
        break;
      }
      case Op::Log: {
        Node& a = at(n.parents[0]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad.data()[i] += g.data()[i] / a.value.data()[i];
        break;
      }
      case Op::LogSumExp: {
        // Adjoint is the softmax of the inputs along the reduced direction.
        Node& a = at(n.parents[0]);
        if (!a.needed) break;
        const Matrix& av = a.value;
        if (n.reduce == Reduce::PerRow) {
          for (std::size_t r = 0; r < av.rows(); ++r)
            for (std::size_t c = 0; c < av.cols(); ++c)
              a.grad(r, c) += g(r, 0) * std::exp(av(r, c) - n.value(r, 0));
        } else {
          for (std::size_t r = 0; r < av.rows(); ++r)
            for (std::size_t c = 0; c < av.cols(); ++c)
              a.grad(r, c) += g(0, c) * std::exp(av(r, c) - n.value(0, c));
        }
        break;
      }
      case Op::Softmax: {
        Node& a = at(n.parents[0]);
        if (!a.needed) break;
        const Matrix& y = n.value;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            a.grad(r, c) += (g(r, c) - dot) * y(r, c);
        }
        break;
      }
      case Op::Gather: {
        // Scatter-add; for bijective index lists this is the inverse gather.
        Node& a = at(n.parents[0]);
        if (!a.needed) break;
        if (n.gather_rows) {
          for (std::size_t r = 0; r < n.indices.size(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) a.grad(n.indices[r], c) += g(r, c);
        } else {
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < n.indices.size(); ++c)
              a.grad(r, n.indices[c]) += g(r, c);
        }
        break;
      }
      case Op::Scale: {
        Node& a = at(n.parents[0]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad.data()[i] += g.data()[i] * n.scalar;
        break;
      }
      case Op::Neg: {
        Node& a = at(n.parents[0]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i) a.grad.data()[i] -= g.data()[i];
        break;
      }
      case Op::SiLU: {
        Node& a = at(n.parents[0]);
        if (!a.needed) break;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = a.value.data()[i];
          const double sig = 1.0 / (1.0 + std::exp(-x));
          a.grad.data()[i] += g.data()[i] * sig * (1.0 + x * (1.0 - sig));
        }
        break;
      }
      case Op::MaskMul: {
        Node& a = at(n.parents[0]);
        if (a.needed)
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad.data()[i] += g.data()[i] * n.aux.data()[i];
        break;
      }
      case Op::Sum: {
        Node& a = at(n.parents[0]);
        if (!a.needed) break;
        if (n.reduce == Reduce::All) {
          const double s = g(0, 0);
          for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.data()[i] += s;
        } else if (n.reduce == Reduce::PerRow) {
          for (std::size_t r = 0; r < a.grad.rows(); ++r)
            for (std::size_t c = 0; c < a.grad.cols(); ++c) a.grad(r, c) += g(r, 0);
        } else {
          for (std::size_t r = 0; r < a.grad.rows(); ++r)
            for (std::size_t c = 0; c < a.grad.cols(); ++c) a.grad(r, c) += g(0, c);
        }
        break;
      }
      case Op::SmoothL1: {
        Node& a = at(n.parents[0]);
        if (!a.needed) break;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = a.value.data()[i] - n.aux.data()[i];
          const double dd = std::abs(d) <= n.scalar ? d / n.scalar : (d > 0 ? 1.0 : -1.0);
          a.grad.data()[i] += g.data()[i] * dd;
        }
        break;
      }
    }
  }

  static void accum_matmul_grad_a(Matrix& ga, const Matrix& g, const Matrix& b, bool ta,
                                  bool tb) {
    // C = A' B' with A' = ta ? A^T : A, B' = tb ? B^T : B.
    if (!ta) {
      // dA = G B'^T
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t k = 0; k < ga.cols(); ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j)
            s += g(i, j) * (tb ? b(j, k) : b(k, j));
          ga(i, k) += s;
        }
    } else {
      // dA = (G B'^T)^T = B' G^T
      for (std::size_t k = 0; k < ga.rows(); ++k)
        for (std::size_t i = 0; i < ga.cols(); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j)
            s += (tb ? b(j, k) : b(k, j)) * g(i, j);
          ga(k, i) += s;
        }
    }
  }

  static void accum_matmul_grad_b(Matrix& gb, const Matrix& g, const Matrix& a, bool ta,
                                  bool tb) {
    if (!tb) {
      // dB = A'^T G
      for (std::size_t k = 0; k < gb.rows(); ++k)
        for (std::size_t j = 0; j < gb.cols(); ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < g.rows(); ++i)
            s += (ta ? a(k, i) : a(i, k)) * g(i, j);
          gb(k, j) += s;
        }
    } else {
      // dB = (A'^T G)^T = G^T A'
      for (std::size_t j = 0; j < gb.rows(); ++j)
        for (std::size_t k = 0; k < gb.cols(); ++k) {
          double s = 0.0;
          for (std::size_t i = 0; i < g.rows(); ++i)
            s += g(i, j) * (ta ? a(k, i) : a(i, k));
          gb(j, k) += s;
        }
    }
  }
};

// Unrolled entropic matching on the tape: the exact forward recurrence of
// the log-domain solver, differentiated by replaying the T recorded
// iterations. Returns the soft permutation node (rows = sources,
// columns = destinations).
inline NodeId sinkhorn_unrolled(Tape& tape, NodeId cost, double epsilon, std::size_t iters,
                                bool rescale_by_n = false) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn_unrolled: epsilon must be > 0");
  const Matrix& c = tape.value(cost);
  if (c.rows() != c.cols())
    throw std::invalid_argument("sinkhorn_unrolled: cost matrix must be square, got " +
                                c.shape_str());
  const std::size_t n = c.rows();
  NodeId log_k = tape.scale(cost, -1.0 / epsilon);
  NodeId log_u = tape.constant(Matrix(n, 1));
  NodeId log_v = tape.constant(Matrix(1, n));
  for (std::size_t t = 0; t < iters; ++t) {
    log_u = tape.neg(tape.logsumexp(tape.add(log_k, log_v), Reduce::PerRow));
    log_v = tape.neg(tape.logsumexp(tape.add(log_k, log_u), Reduce::PerCol));
  }
  NodeId p = tape.exp(tape.add(tape.add(log_k, log_u), log_v));
  if (rescale_by_n) p = tape.scale(p, static_cast<double>(n));
  return p;
}

// Central finite differences against a scalar-valued taped program.
// The program receives a fresh tape plus leaf ids for each parameter and
// returns the loss node. Returns the worst relative deviation between the
// tape gradients and the central differences; denominators are floored at
// 1e-6 so that differencing noise on negligible entries does not dominate.
inline double finite_diff_check(
    const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& program,
    const std::vector<Matrix>& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be > 0");

  auto eval = [&](const std::vector<Matrix>& p) {
    Tape tape;
    std::vector<NodeId> leaves;
    leaves.reserve(p.size());
    for (const Matrix& m : p) leaves.push_back(tape.leaf(m));
    NodeId loss = program(tape, leaves);
    return tape.value(loss)(0, 0);
  };

  Tape tape;
  std::vector<NodeId> leaves;
  for (const Matrix& m : params) leaves.push_back(tape.leaf(m));
  NodeId loss = program(tape, leaves);
  tape.backward(loss);

  double worst = 0.0;
  std::vector<Matrix> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Matrix& g = tape.grad(leaves[pi]);
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double saved = work[pi].data()[i];
      work[pi].data()[i] = saved + h;
      const double up = eval(work);
      work[pi].data()[i] = saved - h;
      const double down = eval(work);
      work[pi].data()[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = g.data()[i];
      const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace permprune::ad
