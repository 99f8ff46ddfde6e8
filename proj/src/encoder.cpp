#include "escgcn/encoder.hpp"

namespace escgcn {

namespace {

/// One direction over the given visit order of rows; returns per-token hidden
/// rows in original token order.
std::vector<TensorPtr> lstm_direction(Tape& tape, const TensorPtr& x,
                                      const LstmDirection& dir, int hidden,
                                      bool reverse) {
  const int n = x->rows();
  const int h = hidden;
  // Input part of all gates in one pass; the recurrent part is per step.
  auto gates_in = add_row_broadcast(tape, matmul(tape, x, dir.wx), dir.b);

  TensorPtr h_prev;  // null = zero state
  TensorPtr c_prev;
  std::vector<TensorPtr> out(n);
  for (int step = 0; step < n; ++step) {
    const int t = reverse ? n - 1 - step : step;
    auto pre = reshape(tape, slice_rows(tape, gates_in, t, t + 1), {4 * h});
    if (h_prev) pre = add(tape, pre, matvec(tape, dir.wh, h_prev));
    auto stacked = reshape(tape, pre, {4, h});
    auto part = [&](int r) {
      return reshape(tape, slice_rows(tape, stacked, r, r + 1), {h});
    };
    auto gi = sigmoid(tape, part(0));
    auto gf = sigmoid(tape, part(1));
    auto gc = tanh_act(tape, part(2));
    auto go = sigmoid(tape, part(3));
    TensorPtr c = c_prev ? add(tape, mul(tape, gf, c_prev), mul(tape, gi, gc))
                         : mul(tape, gi, gc);
    auto ht = mul(tape, go, tanh_act(tape, c));
    out[t] = ht;
    h_prev = ht;
    c_prev = c;
  }
  return out;
}

}  // namespace

TensorPtr bilstm(Tape& tape, const TensorPtr& x, const LstmParams& p) {
  const int n = x->rows();
  auto f = lstm_direction(tape, x, p.fwd, p.hidden, false);
  auto b = lstm_direction(tape, x, p.bwd, p.hidden, true);
  std::vector<TensorPtr> rows(n);
  for (int t = 0; t < n; ++t)
    rows[t] = concat_cols(
        tape, {reshape(tape, f[t], {1, p.hidden}),
               reshape(tape, b[t], {1, p.hidden})});
  return n == 1 ? rows[0] : concat_rows(tape, rows);
}

TensorPtr gcn_layer(Tape& tape, const TensorPtr& g, const NormAdjacency& adj,
                    const TensorPtr& w, const TensorPtr& b) {
  const int n = g->rows();
  if (adj.n != n)
    throw ShapeError("adjacency built over " + std::to_string(adj.n) +
                     " tokens, features have " + std::to_string(n));
  // Constant degree-normalized A~ rows.
  auto a_norm = make_tensor({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      a_norm->at(i, j) =
          adj.a_tilde[static_cast<size_t>(i) * n + j] / adj.degree[i];
  auto gw = matmul(tape, g, w);
  auto agg = matmul(tape, a_norm, gw);
  return relu(tape, add_row_broadcast(tape, agg, b));
}

}  // namespace escgcn
