#include "escgcn/attention.hpp"

#include <algorithm>
#include <cmath>

namespace escgcn {

std::vector<int> relative_offsets(int n, int i, int clip) {
  if (i < 1 || i > n) throw ShapeError("relative_offsets: position out of range");
  std::vector<int> row(n);
  for (int j = 1; j <= n; ++j)
    row[j - 1] = std::clamp(j - i, -clip, clip);
  return row;
}

namespace {

/// scores_pos[i][j] = rm[i][clip + clamp(j - i)], rm: [n x 2clip+1].
TensorPtr spread_relative_scores(Tape& tape, const TensorPtr& rm, int n,
                                 int clip) {
  auto out = make_tensor({n, n}, rm->requires_grad);
  const int w = 2 * clip + 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out->at(i, j) = rm->at(i, clip + std::clamp(j - i, -clip, clip));
  if (out->requires_grad) {
    tape.record([rm, out, n, clip, w] {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          rm->grad[static_cast<size_t>(i) * w + clip +
                   std::clamp(j - i, -clip, clip)] +=
              out->grad[static_cast<size_t>(i) * n + j];
    });
  }
  return out;
}

}  // namespace

AttentionStage attention_pre_norm(Tape& tape, const TensorPtr& input,
                                  const AttentionParams& p, bool collect_heads,
                                  bool include_residual) {
  const int n = input->rows();
  std::vector<TensorPtr> head_outs;
  AttentionStage stage;

  auto rel_t = transpose(tape, p.rel_table);  // [d_rel x 2clip+1]
  for (size_t a = 0; a < p.head_dims.size(); ++a) {
    const int dw = p.head_dims[a];
    auto q = matmul(tape, input, p.wq[a]);
    auto k = matmul(tape, input, p.wk[a]);
    auto v = matmul(tape, input, p.wv[a]);
    auto r = matmul(tape, input, p.wr[a]);
    auto content = matmul(tape, q, transpose(tape, k));      // QK^T
    auto rm = matmul(tape, r, rel_t);                        // R m^T per offset
    auto pos = spread_relative_scores(tape, rm, n, p.clip);  // RM^T
    auto scores =
        scale(tape, add(tape, content, pos), 1.0 / std::sqrt(double(dw)));
    auto attn = softmax_rows(tape, scores);
    if (collect_heads) stage.head_mats.push_back(attn);
    head_outs.push_back(matmul(tape, attn, v));
  }

  auto heads = head_outs.size() == 1 ? head_outs[0]
                                     : concat_cols(tape, head_outs);
  auto projected = add_row_broadcast(tape, matmul(tape, heads, p.wo), p.bo);
  if (include_residual) {
    TensorPtr residual = p.w_res ? matmul(tape, input, p.w_res) : input;
    stage.pre_norm = add(tape, projected, residual);
  } else {
    stage.pre_norm = projected;
  }
  return stage;
}

TensorPtr attention_ff_sublayer(Tape& tape, const TensorPtr& sub1,
                                const AttentionParams& p) {
  auto hidden = relu(
      tape, add_row_broadcast(tape, matmul(tape, sub1, p.ff_w1), p.ff_b1));
  auto ff =
      add_row_broadcast(tape, matmul(tape, hidden, p.ff_w2), p.ff_b2);
  return add(tape, sub1, ff);
}

}  // namespace escgcn
