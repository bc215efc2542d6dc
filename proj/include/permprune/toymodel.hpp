#pragma once
// Desk-scale model and synthetic task. The model is a small pre-norm-free
// Transformer: single-head attention with 1/sqrt(d_k) scaling, residual
// adds, and a SiLU-gated FFN, followed by mean pooling over tokens and a
// dense linear head. The task generator plants weight matrices whose
// saliency is packed into alternating M-sized channel groups, so contiguous
// N:M pruning is forced to drop important weights unless channels are
// reordered first; labels come from the dense model itself.

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "permprune/matrix.hpp"
#include "permprune/permnet.hpp"
#include "permprune/rng.hpp"

namespace permprune {

struct ToyModel {
  std::vector<ToyBlock> blocks;
  LinearLayer head;  // num_classes x d_hidden
  std::size_t tokens = 1;

  std::size_t d_hidden() const { return blocks.at(0).d_hidden(); }
  std::size_t d_ff() const { return blocks.at(0).d_ff(); }
  std::size_t num_classes() const { return head.d_out(); }

  void validate() const {
    if (blocks.empty()) throw std::invalid_argument("ToyModel: needs at least one block");
    for (const auto& b : blocks) b.validate();
    if (head.d_in() != d_hidden())
      throw std::invalid_argument("ToyModel: head input " + std::to_string(head.d_in()) +
                                  " vs d_hidden " + std::to_string(d_hidden()));
  }

  bool operator==(const ToyModel& o) const {
    if (blocks.size() != o.blocks.size() || tokens != o.tokens) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const ToyBlock &a = blocks[i], &b = o.blocks[i];
      if (!(a.wq == b.wq && a.wk == b.wk && a.wv == b.wv && a.wo == b.wo &&
            a.w_up == b.w_up && a.w_gate == b.w_gate && a.w_down == b.w_down))
        return false;
    }
    return head.weight == o.head.weight;
  }
};

inline Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = x(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x(r, c) - mx);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = std::exp(x(r, c) - mx) / s;
  }
  return out;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

struct BlockResult {
  Matrix out;       // tokens x d_hidden
  Matrix attn_out;  // attention submodule output, pre-residual
  Matrix ffn_out;   // ffn submodule output, pre-residual
};

inline BlockResult block_forward(const ToyBlock& block, const Matrix& x) {
  if (x.cols() != block.d_hidden())
    throw std::invalid_argument("block_forward: input " + x.shape_str() + " vs d_hidden " +
                                std::to_string(block.d_hidden()));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(block.d_hidden()));
  Matrix q = matmul(x, transpose(block.wq));
  Matrix k = matmul(x, transpose(block.wk));
  Matrix v = matmul(x, transpose(block.wv));
  Matrix attn = softmax_rows(scaled(matmul(q, transpose(k)), inv_sqrt_dk));

  BlockResult res;
  res.attn_out = matmul(matmul(attn, v), transpose(block.wo));
  Matrix h = add(x, res.attn_out);

  Matrix gate = matmul(h, transpose(block.w_gate));
  Matrix up = matmul(h, transpose(block.w_up));
  Matrix gated(gate.rows(), gate.cols());
  for (std::size_t i = 0; i < gate.size(); ++i)
    gated.data()[i] = silu(gate.data()[i]) * up.data()[i];
  res.ffn_out = matmul(gated, transpose(block.w_down));
  res.out = add(h, res.ffn_out);
  return res;
}

struct ModelResult {
  Matrix logits;                 // 1 x num_classes
  std::vector<Matrix> features;  // one per pruned submodule (attn, ffn per block)
};

inline ModelResult model_forward(const ToyModel& model, const Matrix& x_tokens) {
  ModelResult res;
  Matrix h = x_tokens;
  for (const auto& block : model.blocks) {
    BlockResult br = block_forward(block, h);
    res.features.push_back(std::move(br.attn_out));
    res.features.push_back(std::move(br.ffn_out));
    h = std::move(br.out);
  }
  // Mean-pool tokens, then the dense head.
  Matrix pooled(1, h.cols());
  for (std::size_t r = 0; r < h.rows(); ++r)
    for (std::size_t c = 0; c < h.cols(); ++c) pooled(0, c) += h(r, c);
  pooled = scaled(pooled, 1.0 / static_cast<double>(h.rows()));
  res.logits = model.head.forward(pooled);
  return res;
}

inline std::size_t argmax_row(const Matrix& row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.cols(); ++c)
    if (row(0, c) > row(0, best)) best = c;
  return best;
}

struct SynthTask {
  std::size_t d_hidden = 16;
  std::size_t d_ff = 32;
  std::size_t tokens = 4;
  std::size_t blocks = 1;
  std::size_t num_classes = 4;
  std::size_t num_train = 96;
  std::size_t num_eval = 64;
  std::uint64_t seed = 1234;
  // Planted saliency clustering: alternating M-sized input-channel groups of
  // the attention-out and FFN-down projections are scaled hot/cold.
  std::size_t cluster_m = 4;
  double hot_gain = 3.0;
  double cold_gain = 0.15;

  std::size_t input_dim() const { return tokens * d_hidden; }

  void validate() const {
    if (d_hidden % cluster_m != 0 || d_ff % cluster_m != 0)
      throw std::invalid_argument("SynthTask: cluster_m must divide d_hidden and d_ff");
    if (num_classes < 2) throw std::invalid_argument("SynthTask: need at least 2 classes");
    if (blocks < 1 || blocks > 2)
      throw std::invalid_argument("SynthTask: blocks must be 1 or 2");
  }
};

struct Dataset {
  std::vector<Matrix> inputs;       // each tokens x d_hidden
  std::vector<std::size_t> labels;  // class indices
  std::size_t size() const { return inputs.size(); }
};

namespace detail {

// Weights whose saliency is packed into alternating m-sized column groups:
// entries carry random signs and near-constant magnitude per group class,
// so per-group mean saliency alternates sharply while within-group saliency
// stays flat.
inline Matrix clustered_matrix(Rng& rng, std::size_t rows, std::size_t cols, std::size_t m,
                               double scale, double hot, double cold) {
  Matrix w(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double gain = ((c / m) % 2 == 0) ? hot : cold;
      const double magnitude = gain * scale * (0.8 + 0.4 * rng.uniform());
      w(r, c) = rng.uniform() < 0.5 ? -magnitude : magnitude;
    }
  return w;
}

}  // namespace detail

// Deterministic planted model for a task spec. The same spec always yields
// the same weights.
inline ToyModel planted_model(const SynthTask& spec) {
  spec.validate();
  Rng rng(spec.seed);
  ToyModel model;
  model.tokens = spec.tokens;
  const std::size_t d = spec.d_hidden, f = spec.d_ff;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    ToyBlock block;
    block.wq = rng.gaussian_matrix(d, d, sd);
    block.wk = rng.gaussian_matrix(d, d, sd);
    block.wv = rng.gaussian_matrix(d, d, sd);
    block.wo = detail::clustered_matrix(rng, d, d, spec.cluster_m, sd, spec.hot_gain,
                                        spec.cold_gain);
    block.w_up = rng.gaussian_matrix(f, d, sd);
    block.w_gate = rng.gaussian_matrix(f, d, sd);
    block.w_down = detail::clustered_matrix(rng, d, f, spec.cluster_m, sf, spec.hot_gain,
                                            spec.cold_gain);
    model.blocks.push_back(std::move(block));
  }
  model.head = LinearLayer{rng.gaussian_matrix(spec.num_classes, d, sd), std::nullopt};
  model.validate();
  return model;
}

// Deterministic datasets whose labels are the planted model's own argmax
// predictions, drawn with per-class quotas so classes stay balanced.
inline std::pair<Dataset, Dataset> gen_task(const SynthTask& spec) {
  spec.validate();
  const ToyModel model = planted_model(spec);
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ull);

  auto fill = [&](std::size_t count) {
    Dataset ds;
    if (count == 0) return ds;
    std::vector<std::size_t> quota(spec.num_classes, count / spec.num_classes);
    for (std::size_t k = 0; k < count % spec.num_classes; ++k) ++quota[k];
    std::size_t attempts = 0;
    const std::size_t max_attempts = 500 * count + 10000;
    while (ds.size() < count) {
      if (++attempts > max_attempts)
        throw std::runtime_error("gen_task: class quotas unreachable for seed " +
                                 std::to_string(spec.seed));
      Matrix x = rng.gaussian_matrix(spec.tokens, spec.d_hidden);
      const std::size_t label = argmax_row(model_forward(model, x).logits);
      if (quota[label] == 0) continue;
      --quota[label];
      ds.inputs.push_back(std::move(x));
      ds.labels.push_back(label);
    }
    return ds;
  };

  Dataset train = fill(spec.num_train);
  Dataset eval = fill(spec.num_eval);
  return {std::move(train), std::move(eval)};
}

}  // namespace permprune
