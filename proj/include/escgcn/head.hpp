#pragma once

#include <vector>

#include "escgcn/depgraph.hpp"
#include "escgcn/tensor.hpp"

namespace escgcn {

struct HeadParams {
  TensorPtr ws;  // [d_attn x d_a]
  TensorPtr wg;  // [d_a x d_gcn]
  TensorPtr wp;  // [2 d_p x d_a]
  TensorPtr v;   // [d_a]
  TensorPtr ff_w1, ff_b1;  // [3 d_gcn x d_ffnn], [d_ffnn]
  TensorPtr ff_w2, ff_b2;  // [d_ffnn x d_ffnn], [d_ffnn]
  TensorPtr cls_w, cls_b;  // [d_in x |R|], [|R|]
};

/// Max pooling over kept token rows (Eq. of the sentence summary).
TensorPtr pool_sentence(Tape& tape, const TensorPtr& g,
                        const std::vector<char>& kept_mask);

/// Max pooling over an entity span's rows; span is 1-based inclusive.
TensorPtr pool_entity(Tape& tape, const TensorPtr& g, const Span& span);

/// Entity-aware attention weights over tokens. s may be null when the
/// self-attention branch is ablated (its term is dropped). score_mask, when
/// nonempty, restricts the softmax support (masked-out scores -> -inf).
TensorPtr entity_attention(Tape& tape, const TensorPtr& s,
                           const TensorPtr& g_sent, const TensorPtr& pos,
                           const HeadParams& p,
                           const std::vector<char>& score_mask = {});

/// alpha-weighted sum of GCN token outputs.
TensorPtr attention_pool(Tape& tape, const TensorPtr& alpha,
                         const TensorPtr& g);

/// FFNN over [g_hat; g_s; g_o] (one relu hidden layer, then linear).
TensorPtr fuse(Tape& tape, const TensorPtr& g_hat, const TensorPtr& g_s,
               const TensorPtr& g_o, const HeadParams& p);

/// softmax(w . g_final + b) as a distribution vector.
TensorPtr classify(Tape& tape, const TensorPtr& g_final, const HeadParams& p);

}  // namespace escgcn
