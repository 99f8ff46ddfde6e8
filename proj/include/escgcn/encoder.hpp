#pragma once

#include <vector>

#include "escgcn/depgraph.hpp"
#include "escgcn/tensor.hpp"

namespace escgcn {

/// One LSTM direction. Gate order in the stacked dimension: input, forget,
/// candidate, output.
struct LstmDirection {
  TensorPtr wx;  // [d_in x 4H]
  TensorPtr wh;  // [4H x H]
  TensorPtr b;   // [4H]
};

struct LstmParams {
  int hidden = 0;  // H, per direction
  LstmDirection fwd, bwd;
};

/// [n x d_in] -> [n x 2H]; zero initial states, forward and backward
/// direction outputs concatenated per token.
TensorPtr bilstm(Tape& tape, const TensorPtr& x, const LstmParams& p);

/// One graph convolution: row i = relu((1/d_i) sum_j A~_ij (W g_j) + b).
TensorPtr gcn_layer(Tape& tape, const TensorPtr& g, const NormAdjacency& adj,
                    const TensorPtr& w, const TensorPtr& b);

}  // namespace escgcn
