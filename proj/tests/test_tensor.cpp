#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "escgcn/gradcheck.hpp"
#include "escgcn/tensor.hpp"

using namespace escgcn;

namespace {

TensorPtr rand_tensor(std::vector<int> shape, Rng& rng, bool grad = true,
                      double range = 1.0) {
  auto t = make_tensor(std::move(shape), grad);
  std::uniform_real_distribution<double> unif(-range, range);
  for (double& v : t->data) v = unif(rng);
  return t;
}

/// Reference i-j-k triple loop; the production kernel must accumulate in the
/// same per-cell order and therefore match bit for bit.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::vector<double> out(static_cast<size_t>(a.rows()) * b.cols(), 0.0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out[static_cast<size_t>(i) * b.cols() + j] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul matches the triple-loop oracle bit for bit") {
  Rng rng(11);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {2, 3, 4}, {5, 5, 5},
                         {7, 2, 9}, {13, 17, 11}}) {
    auto a = rand_tensor({m, k}, rng);
    auto b = rand_tensor({k, n}, rng);
    Tape tape;
    auto c = matmul(tape, a, b);
    auto expect = naive_matmul(*a, *b);
    REQUIRE(c->data.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i) CHECK(c->data[i] == expect[i]);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Rng rng(1);
  auto a = rand_tensor({2, 3}, rng);
  auto b = rand_tensor({4, 2}, rng);
  Tape tape;
  CHECK_THROWS_AS(matmul(tape, a, b), ShapeError);
}

TEST_CASE("softmax hand case ln(1..3) -> k/6") {
  auto x = make_tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tape tape;
  auto y = softmax_vec(tape, x);
  CHECK(y->data[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(y->data[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(y->data[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to 1 and survive large logits") {
  Rng rng(5);
  auto x = rand_tensor({6, 9}, rng, true, 500.0);
  Tape tape;
  auto y = softmax_rows(tape, x);
  for (int i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) {
      CHECK(y->at(i, j) >= 0.0);
      sum += y->at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("activation hand values") {
  auto x = make_tensor({4}, {-2.0, -0.5, 0.0, 3.0});
  Tape tape;
  auto r = relu(tape, x);
  CHECK(r->data == std::vector<double>{0.0, 0.0, 0.0, 3.0});
  auto t = tanh_act(tape, x);
  CHECK(t->data[3] == doctest::Approx(std::tanh(3.0)));
  auto s = sigmoid(tape, x);
  CHECK(s->data[2] == doctest::Approx(0.5));
  CHECK(s->data[0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))));
}

TEST_CASE("max pooling ties route gradient to the first index") {
  auto x = make_tensor({3, 1}, {2.0, 7.0, 7.0}, true);
  Tape tape;
  auto m = max_over_rows(tape, x);
  CHECK(m->data[0] == 7.0);
  tape.backward(m);
  CHECK(x->grad == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("max pooling respects the row mask") {
  auto x = make_tensor({3, 2}, {9.0, 0.0, 1.0, 5.0, 2.0, 4.0});
  Tape tape;
  auto m = max_over_rows(tape, x, {0, 1, 1});
  CHECK(m->data == std::vector<double>{2.0, 5.0});
}

TEST_CASE("structural ops round-trip") {
  Rng rng(3);
  auto x = rand_tensor({4, 5}, rng);
  Tape tape;
  auto t = transpose(tape, transpose(tape, x));
  CHECK(t->data == x->data);
  auto r = reshape(tape, reshape(tape, x, {20}), {4, 5});
  CHECK(r->data == x->data);
  auto back = concat_rows(tape, {slice_rows(tape, x, 0, 2),
                                 slice_rows(tape, x, 2, 4)});
  CHECK(back->data == x->data);
  auto cols = concat_cols(tape, {x, x});
  CHECK(cols->shape == std::vector<int>{4, 10});
  CHECK(cols->at(2, 7) == x->at(2, 2));
}

TEST_CASE("gather_rows picks table rows and scatter-adds gradient") {
  auto table = make_tensor({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  auto g = gather_rows(tape, table, {2, 0, 2});
  CHECK(g->data == std::vector<double>{5, 6, 1, 2, 5, 6});
  auto s = sum_squares(tape, g);
  tape.backward(s);
  CHECK(table->grad[4] == doctest::Approx(2 * 5.0 * 2));  // row 2 used twice
  CHECK(table->grad[2] == 0.0);                           // row 1 unused
}

TEST_CASE("batch normalization two-point hand case") {
  BatchNorm bn(1);
  auto x = make_tensor({2, 1}, {1.0, 3.0}, true);
  Tape tape;
  auto y = bn.forward(tape, x, true);
  const double expect = 1.0 / std::sqrt(1.0 + bn.eps);
  CHECK(y->data[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y->data[1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(bn.running_mean[0] == doctest::Approx(0.1 * 2.0));
  BatchNorm bn1(1);
  auto single = make_tensor({1, 1}, std::vector<double>{1.0});
  Tape tape2;
  CHECK_THROWS_AS(bn1.forward(tape2, single, true), NumericError);
}

TEST_CASE("batch normalization inference uses running statistics") {
  BatchNorm bn(2);
  bn.running_mean = {1.0, -1.0};
  bn.running_var = {4.0, 1.0};
  auto x = make_tensor({1, 2}, {3.0, -1.0});
  Tape tape;
  auto y = bn.forward(tape, x, false);
  CHECK(y->data[0] == doctest::Approx(2.0 / std::sqrt(4.0 + bn.eps)));
  CHECK(y->data[1] == doctest::Approx(0.0));
}

TEST_CASE("inverted dropout keeps the expectation") {
  Rng rng(17);
  const int n = 100000;
  auto x = make_tensor({n}, std::vector<double>(n, 1.0));
  Tape tape;
  auto y = dropout(tape, x, 0.5, true, rng);
  double sum = 0.0;
  int zeros = 0;
  for (double v : y->data) {
    sum += v;
    if (v == 0.0) ++zeros;
  }
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(double(zeros) / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK_THROWS_AS(dropout(tape, x, 1.0, true, rng), ConfigError);
  auto id = dropout(tape, x, 0.5, false, rng);
  CHECK(id->data == x->data);
}

TEST_CASE("nll clamps vanishing probabilities with zero gradient") {
  auto probs = make_tensor({3}, {1.0, 0.0, 0.0}, true);
  Tape tape;
  long hits = 0;
  auto l = nll(tape, probs, 1, &hits);
  CHECK(hits == 1);
  CHECK(l->data[0] == doctest::Approx(-std::log(1e-12)));
  tape.backward(l);
  CHECK(probs->grad[1] == 0.0);

  Tape tape2;
  auto l2 = nll(tape2, probs, 0, &hits);
  CHECK(hits == 1);
  CHECK(l2->data[0] == doctest::Approx(0.0));
}

TEST_CASE("backward accumulates over reused tensors") {
  auto x = make_tensor({1}, {3.0}, true);
  Tape tape;
  auto y = add(tape, x, x);           // 2x
  auto z = mul(tape, y, x);           // 2x^2
  tape.backward(z);
  CHECK(x->grad[0] == doctest::Approx(4.0 * 3.0));
}

TEST_CASE("finite differences validate each op family") {
  Rng rng(23);
  auto check = [&rng](const char* label,
                      const std::vector<TensorPtr>& params,
                      const std::function<TensorPtr(Tape&)>& fn) {
    Rng coords(99);
    INFO(label);
    CHECK(check_gradients(params, fn, 1e-5, 10, &coords) < 1e-4);
  };

  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 2}, rng);
  check("matmul", {a, b}, [&](Tape& t) { return sum_squares(t, matmul(t, a, b)); });

  auto v = rand_tensor({4}, rng);
  check("matvec", {a, v}, [&](Tape& t) { return sum_squares(t, matvec(t, a, v)); });

  auto x = rand_tensor({2, 3}, rng);
  check("tanh", {x}, [&](Tape& t) { return sum_squares(t, tanh_act(t, x)); });
  check("sigmoid", {x}, [&](Tape& t) { return sum_squares(t, sigmoid(t, x)); });
  check("softmax_rows", {x}, [&](Tape& t) {
    return sum_squares(t, softmax_rows(t, scale(t, x, 2.0)));
  });
  check("transpose", {x}, [&](Tape& t) { return sum_squares(t, transpose(t, x)); });

  auto logits = rand_tensor({5}, rng);
  check("nll_softmax", {logits}, [&](Tape& t) { return nll(t, softmax_vec(t, logits), 2); });

  auto row = rand_tensor({3}, rng);
  check("add_row_broadcast", {x, row}, [&](Tape& t) {
    return sum_squares(t, add_row_broadcast(t, x, row));
  });

  auto y = rand_tensor({2, 3}, rng);
  check("mul_add_sub", {x, y}, [&](Tape& t) {
    return sum_squares(t, mul(t, add(t, x, y), sub(t, x, y)));
  });
  check("concat_cols", {x, y}, [&](Tape& t) {
    return sum_squares(t, concat_cols(t, {x, y}));
  });
  check("slice_concat_rows", {x, y}, [&](Tape& t) {
    return sum_squares(t, slice_rows(t, concat_rows(t, {x, y}), 1, 3));
  });

  auto u = rand_tensor({4}, rng);
  auto w = rand_tensor({4}, rng);
  check("dot", {u, w}, [&](Tape& t) { return dot(t, u, w); });

  auto table = rand_tensor({4, 3}, rng);
  check("gather_rows", {table}, [&](Tape& t) {
    return sum_squares(t, gather_rows(t, table, {0, 2, 2}));
  });

  auto big = rand_tensor({4, 3}, rng);
  check("max_over_rows", {big}, [&](Tape& t) {
    return sum_squares(t, max_over_rows(t, big, {1, 1, 0, 1}));
  });
  check("reshape", {big}, [&](Tape& t) {
    return sum_squares(t, reshape(t, big, {2, 6}));
  });

  auto gamma = rand_tensor({3}, rng);
  auto beta = rand_tensor({3}, rng);
  check("layer_norm", {big, gamma, beta}, [&](Tape& t) {
    return sum_squares(t, layer_norm(t, big, gamma, beta));
  });

  BatchNorm bn(3);
  Rng bn_rng(7);
  for (double& g : bn.gamma->data) g = 0.5 + 0.1 * (&g - bn.gamma->data.data());
  check("batch_norm", {big, bn.gamma, bn.beta}, [&](Tape& t) {
    return sum_squares(t, bn.forward(t, big, true));
  });
}
