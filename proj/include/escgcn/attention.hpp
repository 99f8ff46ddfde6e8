#pragma once

#include <vector>

#include "escgcn/tensor.hpp"

namespace escgcn {

/// Relative-position self-attention parameters. Heads may have unequal
/// widths; head_dims sums to the attention hidden size. The relative table is
/// shared across heads (rows indexed by clipped offset), each head carrying
/// its own positional query map.
struct AttentionParams {
  int d_model = 0;
  int d_attn = 0;
  int clip = 10;
  std::vector<int> head_dims;
  int d_rel = 0;                    // width of the relative table rows
  std::vector<TensorPtr> wq, wk, wv;  // per head: [d_model x d_w]
  std::vector<TensorPtr> wr;          // per head: [d_model x d_rel]
  TensorPtr rel_table;                // [2 clip + 1 x d_rel]
  TensorPtr wo, bo;                   // output projection
  TensorPtr w_res;                    // residual projection, null if identity
  TensorPtr ff_w1, ff_b1, ff_w2, ff_b2;  // default-residual FF sublayer
};

/// Offsets 1-i .. n-i for query position i (1-based), clipped to [-clip, clip].
std::vector<int> relative_offsets(int n, int i, int clip);

struct AttentionStage {
  TensorPtr pre_norm;                 // [n x d_attn], input to normalization
  std::vector<TensorPtr> head_mats;   // post-softmax [n x n] per head
};

/// Everything up to (not including) the normalization: per-head scaled
/// dot-product scores plus the relative-position term, head concat, output
/// projection and the single simplified residual.
AttentionStage attention_pre_norm(Tape& tape, const TensorPtr& input,
                                  const AttentionParams& p, bool collect_heads,
                                  bool include_residual = true);

/// Default-residual second sublayer (position-wise FF + skip), applied
/// between the two normalizations when the simplified residual is disabled.
TensorPtr attention_ff_sublayer(Tape& tape, const TensorPtr& sub1,
                                const AttentionParams& p);

}  // namespace escgcn
