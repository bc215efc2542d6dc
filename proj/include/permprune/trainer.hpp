#pragma once
// End-to-end optimization of permutation cost matrices.
//
// Each Transformer block carries two learned permutation sites, one per
// internal dimension: the attention-value channels (input of the output
// projection, bound to the q/k/v output channels) and the FFN channels
// (input of the down projection, bound to the up/gate output channels).
// Residual-stream channels are left in place, so normalization-free
// identity paths stay untouched.
//
// A training step builds one tape: per site, group cost matrices run
// through the unrolled entropic solver and are embedded into a
// block-diagonal soft permutation; every coupled weight is soft-permuted,
// masked with the N:M mask of the hard-rounded layout (a constant,
// straight-through), inverse-soft-permuted back to the original frame, and
// the masked model forward produces the cross-entropy plus feature
// distillation loss. Only the cost matrices receive gradients; model
// weights enter the tape as frozen constants.

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "permprune/autodiff.hpp"
#include "permprune/matching.hpp"
#include "permprune/matrix.hpp"
#include "permprune/permnet.hpp"
#include "permprune/rng.hpp"
#include "permprune/sparsity.hpp"
#include "permprune/toymodel.hpp"

namespace permprune {

enum class DistillForm { SquaredL2, SmoothL1 };

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double alpha_distill = 1e-5;
  DistillForm distill_form = DistillForm::SquaredL2;
  double smooth_l1_delta = 1.0;
  double eps_start = 1.0;
  double eps_end = 0.03;
  std::size_t sinkhorn_iters = 50;
  bool sinkhorn_rescale = false;
  std::size_t group_count = 4;
  NMPattern pattern{2, 4};
  SaliencyKind saliency_kind = SaliencyKind::Wanda;
  std::uint64_t seed = 0;
  bool record_timing = false;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (group_count < 1) throw std::invalid_argument("TrainConfig: group_count must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(eps_start >= eps_end) || !(eps_end > 0.0))
      throw std::invalid_argument("TrainConfig: need eps_start >= eps_end > 0");
    pattern.validate();
  }
};

// Learnable cost matrices: one (d/G x d/G) matrix per group per site.
// Sites are ordered [block0 attention, block0 ffn, block1 attention, ...].
struct CostParams {
  struct Site {
    std::size_t block = 0;
    bool attention = true;
    std::size_t dim = 0;
    std::size_t group_size = 0;
    std::vector<Matrix> cost;
  };
  std::vector<Site> sites;

  static CostParams zeros_for(const ToyModel& model, std::size_t group_count) {
    CostParams params;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      for (bool attention : {true, false}) {
        const std::size_t dim = attention ? model.blocks[b].d_hidden() : model.blocks[b].d_ff();
        if (group_count == 0 || dim % group_count != 0)
          throw std::invalid_argument("CostParams: group count " + std::to_string(group_count) +
                                      " does not divide dimension " + std::to_string(dim));
        Site site;
        site.block = b;
        site.attention = attention;
        site.dim = dim;
        site.group_size = dim / group_count;
        site.cost.assign(group_count, Matrix(site.group_size, site.group_size));
        params.sites.push_back(std::move(site));
      }
    }
    return params;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& s : sites)
      for (const auto& c : s.cost) n += c.size();
    return n;
  }
};

// Gradients (and optimizer moments) share the CostParams group layout.
using CostGrads = std::vector<std::vector<Matrix>>;

inline CostGrads zeros_like(const CostParams& params) {
  CostGrads grads;
  for (const auto& s : params.sites) {
    grads.emplace_back();
    for (const auto& c : s.cost) grads.back().emplace_back(c.rows(), c.cols());
  }
  return grads;
}

// Per-channel L2 activation norms collected from the dense model, one vector
// per pruned-weight input: block input (q/k/v), attention-internal (o),
// ffn input (up/gate), ffn-internal (down).
struct ActNorms {
  struct Block {
    std::vector<double> block_input;
    std::vector<double> attn_internal;
    std::vector<double> ffn_input;
    std::vector<double> ffn_internal;
  };
  std::vector<Block> blocks;
};

inline ActNorms calibrate_act_norms(const ToyModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("calibrate_act_norms: empty batch");
  model.validate();
  ActNorms norms;
  norms.blocks.resize(model.blocks.size());
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    norms.blocks[b].block_input.assign(model.blocks[b].d_hidden(), 0.0);
    norms.blocks[b].attn_internal.assign(model.blocks[b].d_hidden(), 0.0);
    norms.blocks[b].ffn_input.assign(model.blocks[b].d_hidden(), 0.0);
    norms.blocks[b].ffn_internal.assign(model.blocks[b].d_ff(), 0.0);
  }

  auto accumulate = [](std::vector<double>& acc, const Matrix& rows) {
    for (std::size_t r = 0; r < rows.rows(); ++r)
      for (std::size_t c = 0; c < rows.cols(); ++c) acc[c] += rows(r, c) * rows(r, c);
  };

  for (const Matrix& x : data.inputs) {
    Matrix h = x;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      const ToyBlock& blk = model.blocks[b];
      accumulate(norms.blocks[b].block_input, h);
      const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(blk.d_hidden()));
      Matrix q = matmul(h, transpose(blk.wq));
      Matrix k = matmul(h, transpose(blk.wk));
      Matrix v = matmul(h, transpose(blk.wv));
      Matrix attn_v = matmul(softmax_rows(scaled(matmul(q, transpose(k)), inv_sqrt_dk)), v);
      accumulate(norms.blocks[b].attn_internal, attn_v);
      Matrix h_mid = add(h, matmul(attn_v, transpose(blk.wo)));
      accumulate(norms.blocks[b].ffn_input, h_mid);
      Matrix gate = matmul(h_mid, transpose(blk.w_gate));
      Matrix up = matmul(h_mid, transpose(blk.w_up));
      Matrix gated(gate.rows(), gate.cols());
      for (std::size_t i = 0; i < gate.size(); ++i)
        gated.data()[i] = silu(gate.data()[i]) * up.data()[i];
      accumulate(norms.blocks[b].ffn_internal, gated);
      h = add(h_mid, matmul(gated, transpose(blk.w_down)));
    }
  }

  for (auto& blk : norms.blocks) {
    for (auto* vec : {&blk.block_input, &blk.attn_internal, &blk.ffn_input, &blk.ffn_internal})
      for (double& v : *vec) v = std::sqrt(v);
  }
  return norms;
}

inline SaliencySpec make_saliency_spec(SaliencyKind kind, const std::vector<double>& norms) {
  return kind == SaliencyKind::Wanda ? SaliencySpec::wanda(norms) : SaliencySpec::magnitude();
}

// Mean cross-entropy with log-softmax stabilization; logits is batch x K.
inline double loss_task(const Matrix& logits, const std::vector<std::size_t>& labels) {
  if (logits.rows() != labels.size())
    throw std::invalid_argument("loss_task: " + std::to_string(labels.size()) +
                                " labels for logits " + logits.shape_str());
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (labels[r] >= logits.cols())
      throw std::invalid_argument("loss_task: label " + std::to_string(labels[r]) +
                                  " out of range for " + std::to_string(logits.cols()) +
                                  " classes");
    double mx = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) s += std::exp(logits(r, c) - mx);
    total += mx + std::log(s) - logits(r, labels[r]);
  }
  return total / static_cast<double>(logits.rows());
}

inline double loss_distill(const std::vector<Matrix>& h_orig, const std::vector<Matrix>& h_pruned,
                           DistillForm form, double delta = 1.0) {
  if (h_orig.size() != h_pruned.size())
    throw std::invalid_argument("loss_distill: feature list lengths differ");
  double total = 0.0;
  for (std::size_t l = 0; l < h_orig.size(); ++l) {
    if (!h_orig[l].same_shape(h_pruned[l]))
      throw std::invalid_argument("loss_distill: feature shape mismatch at layer " +
                                  std::to_string(l) + " (" + h_orig[l].shape_str() + " vs " +
                                  h_pruned[l].shape_str() + ")");
    for (std::size_t i = 0; i < h_orig[l].size(); ++i) {
      const double d = h_pruned[l].data()[i] - h_orig[l].data()[i];
      if (form == DistillForm::SquaredL2)
        total += d * d;
      else
        total += std::abs(d) <= delta ? 0.5 * d * d / delta : std::abs(d) - 0.5 * delta;
    }
  }
  return total;
}

inline double loss_total(double task, double distill, double alpha) {
  return task + alpha * distill;
}

struct StepLosses {
  double total = 0.0;
  double task = 0.0;
  double distill = 0.0;
};

namespace detail {

// Fixed 0/1 selector picking rows [offset, offset+size) out of dim.
inline Matrix group_selector(std::size_t size, std::size_t dim, std::size_t offset) {
  Matrix s(size, dim);
  for (std::size_t r = 0; r < size; ++r) s(r, offset + r) = 1.0;
  return s;
}

// One permutation site prepared on the tape: block-diagonal soft permutation
// assembled from per-group solver outputs, plus the hard rounding of the
// same outputs for mask construction.
struct TapeSite {
  ad::NodeId soft = ad::kNoNode;  // dim x dim, rows = sources, cols = destinations
  PermIndex hard;
  std::vector<ad::NodeId> cost_leaves;
};

inline TapeSite build_site(ad::Tape& tape, const CostParams::Site& site, double epsilon,
                           const TrainConfig& cfg) {
  TapeSite out;
  GroupedPerm rounded;
  rounded.group_size = site.group_size;
  ad::NodeId global = ad::kNoNode;
  for (std::size_t g = 0; g < site.cost.size(); ++g) {
    ad::NodeId cost = tape.leaf(site.cost[g]);
    out.cost_leaves.push_back(cost);
    ad::NodeId soft_g =
        ad::sinkhorn_unrolled(tape, cost, epsilon, cfg.sinkhorn_iters, cfg.sinkhorn_rescale);
    rounded.perms.push_back(round_to_hard({tape.value(soft_g)}));
    ad::NodeId sel = tape.constant(group_selector(site.group_size, site.dim,
                                                  g * site.group_size));
    ad::NodeId embedded = tape.matmul(tape.matmul(sel, soft_g, true, false), sel);
    global = (global == ad::kNoNode) ? embedded : tape.add(global, embedded);
  }
  out.soft = global;
  out.hard = assemble_grouped(rounded);
  return out;
}

// Soft-permute, mask in the hard-rounded permuted frame, and return to the
// original frame. out_perm gathers weight rows, in_perm gathers columns;
// either may be null.
inline ad::NodeId masked_weight(ad::Tape& tape, const Matrix& w, const TapeSite* out_perm,
                                const TapeSite* in_perm, const std::vector<double>& in_norms,
                                const TrainConfig& cfg, NMMask* mask_out = nullptr) {
  // Hard-permuted layout for the mask.
  Matrix w_hard = w;
  std::vector<double> norms = in_norms;
  if (in_perm) {
    w_hard = perm_apply_cols(in_perm->hard, w_hard);
    norms = perm_apply_vector(in_perm->hard, norms);
  }
  if (out_perm) w_hard = perm_apply_rows(out_perm->hard, w_hard);
  const NMMask mask = nm_mask(saliency(w_hard, make_saliency_spec(cfg.saliency_kind, norms)),
                              cfg.pattern);
  if (mask_out) *mask_out = mask;

  // Soft-permuted weight, masked, inverse-permuted back.
  ad::NodeId node = tape.constant(w);
  if (in_perm) node = tape.matmul(node, in_perm->soft);             // W P^T, column gather
  if (out_perm) node = tape.matmul(out_perm->soft, node, true, false);  // P W, row gather
  node = tape.mask_mul(node, mask);
  if (out_perm) node = tape.matmul(out_perm->soft, node);           // inverse row gather
  if (in_perm) node = tape.matmul(node, in_perm->soft, false, true);  // inverse column gather
  return node;
}

struct TapeBlock {
  ad::NodeId wq, wk, wv, wo, w_up, w_gate, w_down;
};

struct TapeModel {
  std::vector<TapeSite> sites;   // same order as CostParams.sites
  std::vector<TapeBlock> blocks;
};

inline TapeModel build_masked_model(ad::Tape& tape, const CostParams& params,
                                    const ToyModel& model, const ActNorms& norms,
                                    const TrainConfig& cfg, double epsilon,
                                    std::vector<NMMask>* masks_out = nullptr) {
  TapeModel tm;
  for (const auto& site : params.sites) tm.sites.push_back(build_site(tape, site, epsilon, cfg));
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const ToyBlock& blk = model.blocks[b];
    const ActNorms::Block& nb = norms.blocks[b];
    TapeSite& attn = tm.sites[2 * b];
    TapeSite& ffn = tm.sites[2 * b + 1];
    TapeBlock t;
    auto grab = [&](const Matrix& w, const TapeSite* op, const TapeSite* ip,
                    const std::vector<double>& n) {
      NMMask mask;
      ad::NodeId id = masked_weight(tape, w, op, ip, n, cfg, masks_out ? &mask : nullptr);
      if (masks_out) masks_out->push_back(std::move(mask));
      return id;
    };
    t.wq = grab(blk.wq, &attn, nullptr, nb.block_input);
    t.wk = grab(blk.wk, &attn, nullptr, nb.block_input);
    t.wv = grab(blk.wv, &attn, nullptr, nb.block_input);
    t.wo = grab(blk.wo, nullptr, &attn, nb.attn_internal);
    t.w_up = grab(blk.w_up, &ffn, nullptr, nb.ffn_input);
    t.w_gate = grab(blk.w_gate, &ffn, nullptr, nb.ffn_input);
    t.w_down = grab(blk.w_down, nullptr, &ffn, nb.ffn_internal);
    tm.blocks.push_back(t);
  }
  return tm;
}

struct TapeForward {
  ad::NodeId logits = ad::kNoNode;
  std::vector<ad::NodeId> features;
};

inline TapeForward tape_model_forward(ad::Tape& tape, const TapeModel& tm,
                                      const ToyModel& model, const Matrix& x_tokens) {
  TapeForward out;
  ad::NodeId h = tape.constant(x_tokens);
  const double inv_tokens = 1.0 / static_cast<double>(x_tokens.rows());
  for (std::size_t b = 0; b < tm.blocks.size(); ++b) {
    const TapeBlock& t = tm.blocks[b];
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(model.blocks[b].d_hidden()));
    ad::NodeId q = tape.matmul(h, t.wq, false, true);
    ad::NodeId k = tape.matmul(h, t.wk, false, true);
    ad::NodeId v = tape.matmul(h, t.wv, false, true);
    ad::NodeId attn = tape.softmax_rows(tape.scale(tape.matmul(q, k, false, true), inv_sqrt_dk));
    ad::NodeId attn_out = tape.matmul(tape.matmul(attn, v), t.wo, false, true);
    out.features.push_back(attn_out);
    h = tape.add(h, attn_out);
    ad::NodeId gate = tape.silu(tape.matmul(h, t.w_gate, false, true));
    ad::NodeId up = tape.matmul(h, t.w_up, false, true);
    ad::NodeId ffn_out = tape.matmul(tape.mul(gate, up), t.w_down, false, true);
    out.features.push_back(ffn_out);
    h = tape.add(h, ffn_out);
  }
  ad::NodeId pooled = tape.scale(tape.sum(h, ad::Reduce::PerCol), inv_tokens);
  out.logits = tape.matmul(pooled, tape.constant(model.head.weight), false, true);
  return out;
}

}  // namespace detail

// One optimization step over a batch: returns cost-matrix gradients in the
// CostParams layout plus the decomposed loss values.
inline std::pair<CostGrads, StepLosses> train_step(const CostParams& params,
                                                   const ToyModel& model, const ActNorms& norms,
                                                   const Dataset& data,
                                                   const std::vector<std::size_t>& batch,
                                                   const TrainConfig& cfg, double epsilon) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  ad::Tape tape;
  detail::TapeModel tm = detail::build_masked_model(tape, params, model, norms, cfg, epsilon);

  ad::NodeId ce_sum = ad::kNoNode;
  ad::NodeId distill_sum = ad::kNoNode;
  for (std::size_t idx : batch) {
    const Matrix& x = data.inputs.at(idx);
    const std::size_t label = data.labels.at(idx);
    detail::TapeForward fwd = detail::tape_model_forward(tape, tm, model, x);

    ad::NodeId ce = tape.sub(tape.logsumexp(fwd.logits, ad::Reduce::PerRow),
                             tape.gather(fwd.logits, {label}, false));
    ce_sum = (ce_sum == ad::kNoNode) ? ce : tape.add(ce_sum, ce);

    ModelResult teacher = model_forward(model, x);
    for (std::size_t l = 0; l < fwd.features.size(); ++l) {
      ad::NodeId term;
      if (cfg.distill_form == DistillForm::SquaredL2) {
        ad::NodeId d = tape.sub(fwd.features[l], tape.constant(teacher.features[l]));
        term = tape.sum_all(tape.mul(d, d));
      } else {
        term = tape.sum_all(
            tape.smooth_l1(fwd.features[l], teacher.features[l], cfg.smooth_l1_delta));
      }
      distill_sum = (distill_sum == ad::kNoNode) ? term : tape.add(distill_sum, term);
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ad::NodeId task = tape.scale(ce_sum, inv_b);
  ad::NodeId distill = tape.scale(distill_sum, inv_b);
  ad::NodeId loss = tape.add(task, tape.scale(distill, cfg.alpha_distill));
  tape.backward(loss);

  CostGrads grads;
  for (const auto& site : tm.sites) {
    grads.emplace_back();
    for (ad::NodeId leaf : site.cost_leaves) grads.back().push_back(tape.grad(leaf));
  }
  StepLosses losses;
  losses.task = tape.value(task)(0, 0);
  losses.distill = tape.value(distill)(0, 0);
  losses.total = tape.value(loss)(0, 0);
  return {std::move(grads), losses};
}

struct AdamWState {
  CostGrads m;
  CostGrads v;
  std::size_t step = 0;

  static AdamWState zeros_for(const CostParams& params) {
    return {zeros_like(params), zeros_like(params), 0};
  }
};

// Decoupled weight decay, bias-corrected moments.
inline void adamw_update(CostParams& params, const CostGrads& grads, AdamWState& state,
                         const TrainConfig& cfg) {
  if (grads.size() != params.sites.size())
    throw std::invalid_argument("adamw_update: gradient layout mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t s = 0; s < params.sites.size(); ++s) {
    auto& site = params.sites[s];
    if (grads[s].size() != site.cost.size())
      throw std::invalid_argument("adamw_update: gradient layout mismatch");
    for (std::size_t g = 0; g < site.cost.size(); ++g) {
      Matrix& x = site.cost[g];
      const Matrix& grad = grads[s][g];
      if (!x.same_shape(grad))
        throw std::invalid_argument("adamw_update: gradient shape mismatch (" + x.shape_str() +
                                    " vs " + grad.shape_str() + ")");
      Matrix& m = state.m[s][g];
      Matrix& v = state.v[s][g];
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double gi = grad.data()[i];
        m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
        v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
        const double mhat = m.data()[i] / bc1;
        const double vhat = v.data()[i] / bc2;
        x.data()[i] = x.data()[i] * (1.0 - cfg.lr * cfg.weight_decay) -
                      cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
    }
  }
}

// Deployment path: exact assignment on each group cost, coupled block
// permutations, N:M masks in the permuted layout, masks inverse-permuted
// onto the original layout. The returned model's forward is the deployed
// forward.
struct PrunedModel {
  ToyModel model;                    // masked weights, original layout
  std::vector<PermIndex> site_perms;  // resolved per-site hard permutations
  std::vector<NMMask> permuted_masks; // per block: wq, wk, wv, wo, w_up, w_gate, w_down
  double retained_saliency = 0.0;
};

inline PrunedModel inference_prune(const CostParams& params, const ToyModel& model,
                                   const ActNorms& norms, const TrainConfig& cfg) {
  PrunedModel out;
  out.model = model;
  for (const auto& site : params.sites) {
    GroupedPerm gp;
    gp.group_size = site.group_size;
    for (const Matrix& c : site.cost) gp.perms.push_back(hungarian_solve(c));
    out.site_perms.push_back(assemble_grouped(gp));
  }

  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const ToyBlock& blk = model.blocks[b];
    const ActNorms::Block& nb = norms.blocks[b];
    const PermIndex& p_attn = out.site_perms[2 * b];
    const PermIndex& p_ffn = out.site_perms[2 * b + 1];

    auto prune_one = [&](const Matrix& w, const PermIndex* out_perm, const PermIndex* in_perm,
                         const std::vector<double>& in_norms) {
      Matrix w_hard = w;
      std::vector<double> n = in_norms;
      if (in_perm) {
        w_hard = perm_apply_cols(*in_perm, w_hard);
        n = perm_apply_vector(*in_perm, n);
      }
      if (out_perm) w_hard = perm_apply_rows(*out_perm, w_hard);
      const Matrix sal = saliency(w_hard, make_saliency_spec(cfg.saliency_kind, n));
      const NMMask mask = nm_mask(sal, cfg.pattern);
      out.retained_saliency += retained_saliency(sal, mask);
      out.permuted_masks.push_back(mask);
      Matrix masked = apply_mask(w_hard, mask);
      if (out_perm) masked = perm_apply_rows(perm_invert(*out_perm), masked);
      if (in_perm) masked = perm_apply_cols(perm_invert(*in_perm), masked);
      return masked;
    };

    ToyBlock& dst = out.model.blocks[b];
    dst.wq = prune_one(blk.wq, &p_attn, nullptr, nb.block_input);
    dst.wk = prune_one(blk.wk, &p_attn, nullptr, nb.block_input);
    dst.wv = prune_one(blk.wv, &p_attn, nullptr, nb.block_input);
    dst.wo = prune_one(blk.wo, nullptr, &p_attn, nb.attn_internal);
    dst.w_up = prune_one(blk.w_up, &p_ffn, nullptr, nb.ffn_input);
    dst.w_gate = prune_one(blk.w_gate, &p_ffn, nullptr, nb.ffn_input);
    dst.w_down = prune_one(blk.w_down, nullptr, &p_ffn, nb.ffn_internal);
  }
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  double task = 0.0;
  double distill = 0.0;
  double total = 0.0;
};

// Held-out evaluation of the deployed (hard-permuted, masked) model against
// the dense teacher.
inline EvalResult evaluate_pruned(const PrunedModel& pruned, const ToyModel& dense,
                                  const Dataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_pruned: empty dataset");
  EvalResult res;
  Matrix logits(data.size(), dense.num_classes());
  double distill_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ModelResult student = model_forward(pruned.model, data.inputs[i]);
    ModelResult teacher = model_forward(dense, data.inputs[i]);
    for (std::size_t c = 0; c < dense.num_classes(); ++c) logits(i, c) = student.logits(0, c);
    distill_sum += loss_distill(teacher.features, student.features, cfg.distill_form,
                                cfg.smooth_l1_delta);
    if (argmax_row(student.logits) == data.labels[i]) ++hits;
  }
  res.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  res.task = loss_task(logits, data.labels);
  res.distill = distill_sum / static_cast<double>(data.size());
  res.total = loss_total(res.task, res.distill, cfg.alpha_distill);
  return res;
}

struct TrainRecord {
  std::size_t epoch = 0;
  double eps = 0.0;
  double loss_total = 0.0;
  double loss_task = 0.0;
  double loss_distill = 0.0;
  double eval_acc = 0.0;
  double retained_saliency = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
};

// Full optimization run. Reported losses are held-out metrics of the
// deployed (Hungarian + hard mask) model after each epoch; record 0 is the
// untrained baseline, which under zero-initialized costs is plain
// identity-layout pruning.
inline std::pair<CostParams, TrainReport> train_loop(const ToyModel& model,
                                                     const Dataset& train, const Dataset& eval,
                                                     const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!cfg.record_timing) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const ActNorms norms = calibrate_act_norms(model, train);
  CostParams params = CostParams::zeros_for(model, cfg.group_count);
  AdamWState state = AdamWState::zeros_for(params);

  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;

  TrainReport report;
  auto record_eval = [&](std::size_t epoch, double eps) {
    PrunedModel pruned = inference_prune(params, model, norms, cfg);
    EvalResult ev = evaluate_pruned(pruned, model, eval, cfg);
    TrainRecord rec;
    rec.epoch = epoch;
    rec.eps = eps;
    rec.loss_total = ev.total;
    rec.loss_task = ev.task;
    rec.loss_distill = ev.distill;
    rec.eval_acc = ev.accuracy;
    rec.retained_saliency = pruned.retained_saliency;
    rec.seconds = elapsed();
    report.records.push_back(rec);
  };

  record_eval(0, cfg.eps_start);

  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed ^ (0x517cc1b727220a95ull + epoch));
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      const double eps = anneal_schedule(global_step, total_steps, cfg.eps_start, cfg.eps_end);
      auto [grads, losses] = train_step(params, model, norms, train, batch, cfg, eps);
      adamw_update(params, grads, state, cfg);
      ++global_step;
    }
    record_eval(epoch, anneal_schedule(global_step, total_steps, cfg.eps_start, cfg.eps_end));
  }
  return {std::move(params), std::move(report)};
}

}  // namespace permprune
