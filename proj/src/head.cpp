#include "escgcn/head.hpp"

namespace escgcn {

TensorPtr pool_sentence(Tape& tape, const TensorPtr& g,
                        const std::vector<char>& kept_mask) {
  return max_over_rows(tape, g, kept_mask);
}

TensorPtr pool_entity(Tape& tape, const TensorPtr& g, const Span& span) {
  return max_over_rows(tape, slice_rows(tape, g, span.first - 1, span.last));
}

TensorPtr entity_attention(Tape& tape, const TensorPtr& s,
                           const TensorPtr& g_sent, const TensorPtr& pos,
                           const HeadParams& p,
                           const std::vector<char>& score_mask) {
  const int n = pos->rows();
  auto pre = matmul(tape, pos, p.wp);                       // [n x d_a]
  if (s) pre = add(tape, pre, matmul(tape, s, p.ws));
  pre = add_row_broadcast(tape, pre, matvec(tape, p.wg, g_sent));
  auto u = tanh_act(tape, pre);
  auto scores = matvec(tape, u, p.v);                       // [n]
  if (!score_mask.empty()) {
    auto mask = make_tensor({n});
    for (int i = 0; i < n; ++i)
      mask->data[i] = score_mask[i] ? 0.0 : -1e30;
    scores = add(tape, scores, mask);
  }
  return softmax_vec(tape, scores);
}

TensorPtr attention_pool(Tape& tape, const TensorPtr& alpha,
                         const TensorPtr& g) {
  auto row = reshape(tape, alpha, {1, alpha->size()});
  return reshape(tape, matmul(tape, row, g), {g->cols()});
}

TensorPtr fuse(Tape& tape, const TensorPtr& g_hat, const TensorPtr& g_s,
               const TensorPtr& g_o, const HeadParams& p) {
  const int d = g_hat->size();
  auto cat = concat_cols(tape, {reshape(tape, g_hat, {1, d}),
                                reshape(tape, g_s, {1, g_s->size()}),
                                reshape(tape, g_o, {1, g_o->size()})});
  auto hidden =
      relu(tape, add_row_broadcast(tape, matmul(tape, cat, p.ff_w1), p.ff_b1));
  auto out = add_row_broadcast(tape, matmul(tape, hidden, p.ff_w2), p.ff_b2);
  return reshape(tape, out, {out->cols()});
}

TensorPtr classify(Tape& tape, const TensorPtr& g_final, const HeadParams& p) {
  auto row = reshape(tape, g_final, {1, g_final->size()});
  auto logits = add_row_broadcast(tape, matmul(tape, row, p.cls_w), p.cls_b);
  return reshape(tape, softmax_rows(tape, logits), {logits->cols()});
}

}  // namespace escgcn
