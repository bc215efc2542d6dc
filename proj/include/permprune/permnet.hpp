#pragma once
// Channel-permutation algebra over linear chains and Transformer blocks.
//
// Layers store weights as (d_out x d_in) and compute y = x * W^T (+ bias),
// so an input-channel permutation is a column gather of W and an
// output-channel permutation is a row gather. Coupled-block rules:
//   - the input permutation of the attention output projection is applied
//     to the output channels of the q/k/v projections;
//   - the input permutation of the FFN down projection is applied to the
//     output channels of the up and gate projections.
// Both leave the block's function unchanged for every input.

#include <optional>
#include <stdexcept>
#include <vector>

#include "permprune/matrix.hpp"
#include "permprune/sparsity.hpp"

namespace permprune {

struct LinearLayer {
  Matrix weight;  // d_out x d_in
  std::optional<std::vector<double>> bias;  // length d_out

  std::size_t d_out() const { return weight.rows(); }
  std::size_t d_in() const { return weight.cols(); }

  void validate() const {
    if (bias && bias->size() != weight.rows())
      throw std::invalid_argument("LinearLayer: bias length " + std::to_string(bias->size()) +
                                  " vs weight " + weight.shape_str());
  }

  // y = x * W^T + bias, x is (batch x d_in)
  Matrix forward(const Matrix& x) const {
    if (x.cols() != d_in())
      throw std::invalid_argument("LinearLayer::forward: input " + x.shape_str() +
                                  " vs weight " + weight.shape_str());
    Matrix y(x.rows(), d_out());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t o = 0; o < d_out(); ++o) {
        double s = bias ? (*bias)[o] : 0.0;
        for (std::size_t j = 0; j < d_in(); ++j) s += x(r, j) * weight(o, j);
        y(r, o) = s;
      }
    return y;
  }
};

// Single-head attention + gated FFN weights for one block. Single head keeps
// the whole d_hidden dimension permutable as one unit.
struct ToyBlock {
  Matrix wq, wk, wv, wo;   // d_hidden x d_hidden
  Matrix w_up, w_gate;     // d_ff x d_hidden
  Matrix w_down;           // d_hidden x d_ff

  std::size_t d_hidden() const { return wq.rows(); }
  std::size_t d_ff() const { return w_up.rows(); }

  void validate() const {
    const std::size_t d = d_hidden(), f = d_ff();
    auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
      if (m.rows() != r || m.cols() != c)
        throw std::invalid_argument(std::string("ToyBlock: ") + name + " is " + m.shape_str() +
                                    ", expected " + Matrix::shape_str(r, c));
    };
    expect(wq, d, d, "wq");
    expect(wk, d, d, "wk");
    expect(wv, d, d, "wv");
    expect(wo, d, d, "wo");
    expect(w_up, f, d, "w_up");
    expect(w_gate, f, d, "w_gate");
    expect(w_down, d, f, "w_down");
  }
};

// Block-diagonal permutation: one independent permutation per contiguous
// group of group_size channels.
struct GroupedPerm {
  std::size_t group_size = 0;
  std::vector<PermIndex> perms;

  std::size_t dim() const { return group_size * perms.size(); }

  static GroupedPerm identity(std::size_t dim, std::size_t group_count) {
    if (group_count == 0 || dim % group_count != 0)
      throw std::invalid_argument("GroupedPerm: group count " + std::to_string(group_count) +
                                  " does not divide dimension " + std::to_string(dim));
    GroupedPerm g;
    g.group_size = dim / group_count;
    g.perms.assign(group_count, PermIndex::identity(g.group_size));
    return g;
  }

  void validate() const {
    for (const auto& p : perms) {
      p.validate();
      if (p.size() != group_size)
        throw std::invalid_argument("GroupedPerm: member permutation of length " +
                                    std::to_string(p.size()) + " in groups of " +
                                    std::to_string(group_size));
    }
  }
};

// Flatten to a global permutation; group g occupies [g*group_size, (g+1)*group_size).
inline PermIndex assemble_grouped(const GroupedPerm& gp) {
  gp.validate();
  PermIndex global;
  global.map.resize(gp.dim());
  for (std::size_t g = 0; g < gp.perms.size(); ++g) {
    const std::size_t off = g * gp.group_size;
    for (std::size_t j = 0; j < gp.group_size; ++j)
      global.map[off + j] = off + gp.perms[g].map[j];
  }
  return global;
}

inline bool respects_groups(const PermIndex& p, std::size_t group_size) {
  if (group_size == 0 || p.size() % group_size != 0) return false;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p.map[j] / group_size != j / group_size) return false;
  return true;
}

// W_hat^T = P W^T: gather weight columns; bias untouched.
inline LinearLayer permute_linear_input(const LinearLayer& layer, const PermIndex& p) {
  if (p.size() != layer.d_in())
    throw std::invalid_argument("permute_linear_input: permutation length " +
                                std::to_string(p.size()) + " vs d_in " +
                                std::to_string(layer.d_in()));
  LinearLayer out;
  out.weight = perm_apply_cols(p, layer.weight);
  out.bias = layer.bias;
  return out;
}

// Compensating output-channel permutation of the preceding layer: gather
// weight rows and bias entries so the chain output is unchanged.
inline LinearLayer propagate_to_prev_output(const LinearLayer& prev, const PermIndex& p) {
  if (p.size() != prev.d_out())
    throw std::invalid_argument("propagate_to_prev_output: permutation length " +
                                std::to_string(p.size()) + " vs d_out " +
                                std::to_string(prev.d_out()));
  LinearLayer out;
  out.weight = perm_apply_rows(p, prev.weight);
  if (prev.bias) out.bias = perm_apply_vector(p, *prev.bias);
  return out;
}

// Permute the attention-internal dimension: wo input columns gathered, and
// the same permutation applied to q/k/v output rows. Attention output is
// identical for every input.
inline ToyBlock permute_attention_internal(const ToyBlock& block, const PermIndex& p) {
  if (p.size() != block.d_hidden())
    throw std::invalid_argument("permute_attention_internal: permutation length " +
                                std::to_string(p.size()) + " vs d_hidden " +
                                std::to_string(block.d_hidden()));
  ToyBlock out = block;
  out.wq = perm_apply_rows(p, block.wq);
  out.wk = perm_apply_rows(p, block.wk);
  out.wv = perm_apply_rows(p, block.wv);
  out.wo = perm_apply_cols(p, block.wo);
  return out;
}

// Permute the FFN-internal dimension: w_down input columns gathered, up and
// gate output rows gathered. The gated elementwise activation commutes with
// the gather, so the FFN output is identical.
inline ToyBlock permute_ffn_internal(const ToyBlock& block, const PermIndex& p) {
  if (p.size() != block.d_ff())
    throw std::invalid_argument("permute_ffn_internal: permutation length " +
                                std::to_string(p.size()) + " vs d_ff " +
                                std::to_string(block.d_ff()));
  ToyBlock out = block;
  out.w_up = perm_apply_rows(p, block.w_up);
  out.w_gate = perm_apply_rows(p, block.w_gate);
  out.w_down = perm_apply_cols(p, block.w_down);
  return out;
}

// Activation norms travel with their channels under an input permutation.
inline SaliencySpec permute_saliency_spec(const SaliencySpec& spec, const PermIndex& p) {
  if (spec.kind != SaliencyKind::Wanda || !spec.act_norms) return spec;
  return SaliencySpec::wanda(perm_apply_vector(p, *spec.act_norms));
}

// Mask in the ORIGINAL layout that realizes N:M pruning in the permuted
// layout: compute saliency on the input-permuted weight, take the N:M mask
// there, then gather mask columns back through the inverse permutation.
// Masking the original weight with this mask equals inverse-permuting the
// masked permuted weight, entry for entry.
inline NMMask inverse_permuted_mask(const Matrix& w, const PermIndex& p,
                                    const SaliencySpec& spec, NMPattern pattern) {
  if (p.size() != w.cols())
    throw std::invalid_argument("inverse_permuted_mask: permutation length " +
                                std::to_string(p.size()) + " vs weight " + w.shape_str());
  const Matrix w_perm = perm_apply_cols(p, w);
  const Matrix sal = saliency(w_perm, permute_saliency_spec(spec, p));
  const NMMask mask_perm = nm_mask(sal, pattern);
  const PermIndex inv = perm_invert(p);
  NMMask out(mask_perm.rows, mask_perm.cols);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t j = 0; j < out.cols; ++j) out.at(r, j) = mask_perm.at(r, inv.map[j]);
  return out;
}

}  // namespace permprune
