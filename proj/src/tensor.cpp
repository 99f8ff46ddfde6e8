#include "escgcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace escgcn {

namespace {

int shape_product(const std::vector<int>& shape) {
  int p = 1;
  for (int s : shape) {
    if (s <= 0) throw ShapeError("non-positive dimension in shape");
    p *= s;
  }
  return p;
}

bool needs_grad(const TensorPtr& a) { return a && a->requires_grad; }

TensorPtr out_like(std::vector<int> shape, bool requires_grad) {
  auto t = make_tensor(std::move(shape), requires_grad);
  return t;
}

}  // namespace

void Tensor::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad) {
  if (shape.size() > 3) throw ShapeError("rank > 3 not supported");
  auto t = std::make_shared<Tensor>();
  int n = shape_product(shape);
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(n), 0.0);
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> values,
                      bool requires_grad) {
  auto t = make_tensor(std::move(shape), requires_grad);
  if (values.size() != t->data.size())
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(*t));
  t->data = std::move(values);
  return t;
}

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < t.shape.size(); ++i)
    os << (i ? "x" : "") << t.shape[i];
  os << "]";
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->size() != 1) throw ShapeError("backward requires a scalar loss");
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---- matmul ---------------------------------------------------------------

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->cols() != b->rows())
    throw ShapeError("matmul shape mismatch: " + shape_str(*a) + " x " +
                     shape_str(*b));
  const int m = a->rows(), k = a->cols(), n = b->cols();
  auto out = out_like({m, n}, needs_grad(a) || needs_grad(b));
  // i-k-j order: ascending-k accumulation per output cell, matching the
  // naive triple loop bit-for-bit while staying cache friendly.
  for (int i = 0; i < m; ++i) {
    double* orow = &out->data[static_cast<size_t>(i) * n];
    const double* arow = &a->data[static_cast<size_t>(i) * k];
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = &b->data[static_cast<size_t>(kk) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (out->requires_grad) {
    tape.record([a, b, out, m, k, n] {
      if (a->requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = out->grad[static_cast<size_t>(i) * n + j];
            if (g == 0.0) continue;
            for (int kk = 0; kk < k; ++kk)
              a->grad[static_cast<size_t>(i) * k + kk] +=
                  g * b->data[static_cast<size_t>(kk) * n + j];
          }
      }
      if (b->requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double av = a->data[static_cast<size_t>(i) * k + kk];
            if (av == 0.0) continue;
            double* bg = &b->grad[static_cast<size_t>(kk) * n];
            const double* og = &out->grad[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) bg[j] += av * og[j];
          }
      }
    });
  }
  return out;
}

TensorPtr matvec(Tape& tape, const TensorPtr& a, const TensorPtr& v) {
  if (a->rank() != 2 || v->rank() != 1 || a->cols() != v->rows())
    throw ShapeError("matvec shape mismatch: " + shape_str(*a) + " x " +
                     shape_str(*v));
  const int m = a->rows(), k = a->cols();
  auto out = out_like({m}, needs_grad(a) || needs_grad(v));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    const double* arow = &a->data[static_cast<size_t>(i) * k];
    for (int j = 0; j < k; ++j) s += arow[j] * v->data[j];
    out->data[i] = s;
  }
  if (out->requires_grad) {
    tape.record([a, v, out, m, k] {
      for (int i = 0; i < m; ++i) {
        const double g = out->grad[i];
        if (g == 0.0) continue;
        if (a->requires_grad) {
          double* ag = &a->grad[static_cast<size_t>(i) * k];
          for (int j = 0; j < k; ++j) ag[j] += g * v->data[j];
        }
        if (v->requires_grad) {
          const double* arow = &a->data[static_cast<size_t>(i) * k];
          for (int j = 0; j < k; ++j) v->grad[j] += g * arow[j];
        }
      }
    });
  }
  return out;
}

// ---- elementwise ----------------------------------------------------------

static void check_same_shape(const TensorPtr& a, const TensorPtr& b,
                             const char* op) {
  if (a->shape != b->shape)
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(*a) +
                     " vs " + shape_str(*b));
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  auto out = out_like(a->shape, needs_grad(a) || needs_grad(b));
  for (int i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    tape.record([a, b, out] {
      if (a->requires_grad)
        for (int i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (int i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "sub");
  auto out = out_like(a->shape, needs_grad(a) || needs_grad(b));
  for (int i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad) {
    tape.record([a, b, out] {
      if (a->requires_grad)
        for (int i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (int i = 0; i < out->size(); ++i) b->grad[i] -= out->grad[i];
    });
  }
  return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  auto out = out_like(a->shape, needs_grad(a) || needs_grad(b));
  for (int i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad) {
    tape.record([a, b, out] {
      if (a->requires_grad)
        for (int i = 0; i < out->size(); ++i)
          a->grad[i] += out->grad[i] * b->data[i];
      if (b->requires_grad)
        for (int i = 0; i < out->size(); ++i)
          b->grad[i] += out->grad[i] * a->data[i];
    });
  }
  return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
  auto out = out_like(a->shape, needs_grad(a));
  for (int i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * c;
  if (out->requires_grad) {
    tape.record([a, out, c] {
      for (int i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

TensorPtr add_row_broadcast(Tape& tape, const TensorPtr& x,
                            const TensorPtr& v) {
  if (x->rank() != 2 || v->rank() != 1 || x->cols() != v->rows())
    throw ShapeError("add_row_broadcast shape mismatch: " + shape_str(*x) +
                     " + " + shape_str(*v));
  const int n = x->rows(), d = x->cols();
  auto out = out_like(x->shape, needs_grad(x) || needs_grad(v));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out->at(i, j) = x->at(i, j) + v->data[j];
  if (out->requires_grad) {
    tape.record([x, v, out, n, d] {
      if (x->requires_grad)
        for (int i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
      if (v->requires_grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            v->grad[j] += out->grad[static_cast<size_t>(i) * d + j];
    });
  }
  return out;
}

// ---- activations ----------------------------------------------------------

TensorPtr relu(Tape& tape, const TensorPtr& x) {
  auto out = out_like(x->shape, needs_grad(x));
  for (int i = 0; i < out->size(); ++i)
    out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  if (out->requires_grad) {
    tape.record([x, out] {
      for (int i = 0; i < out->size(); ++i)
        if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr tanh_act(Tape& tape, const TensorPtr& x) {
  auto out = out_like(x->shape, needs_grad(x));
  for (int i = 0; i < out->size(); ++i) out->data[i] = std::tanh(x->data[i]);
  if (out->requires_grad) {
    tape.record([x, out] {
      for (int i = 0; i < out->size(); ++i)
        x->grad[i] += out->grad[i] * (1.0 - out->data[i] * out->data[i]);
    });
  }
  return out;
}

TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
  auto out = out_like(x->shape, needs_grad(x));
  for (int i = 0; i < out->size(); ++i)
    out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
  if (out->requires_grad) {
    tape.record([x, out] {
      for (int i = 0; i < out->size(); ++i)
        x->grad[i] += out->grad[i] * out->data[i] * (1.0 - out->data[i]);
    });
  }
  return out;
}

// ---- softmax --------------------------------------------------------------

static void softmax_row(const double* in, double* outp, int n) {
  double mx = in[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    outp[j] = std::exp(in[j] - mx);
    sum += outp[j];
  }
  for (int j = 0; j < n; ++j) outp[j] /= sum;
}

TensorPtr softmax_rows(Tape& tape, const TensorPtr& x) {
  if (x->rank() != 2) throw ShapeError("softmax_rows needs a matrix");
  const int m = x->rows(), n = x->cols();
  auto out = out_like(x->shape, needs_grad(x));
  for (int i = 0; i < m; ++i)
    softmax_row(&x->data[static_cast<size_t>(i) * n],
                &out->data[static_cast<size_t>(i) * n], n);
  if (out->requires_grad) {
    tape.record([x, out, m, n] {
      for (int i = 0; i < m; ++i) {
        const double* y = &out->data[static_cast<size_t>(i) * n];
        const double* gy = &out->grad[static_cast<size_t>(i) * n];
        double dotv = 0.0;
        for (int j = 0; j < n; ++j) dotv += gy[j] * y[j];
        double* gx = &x->grad[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dotv);
      }
    });
  }
  return out;
}

TensorPtr softmax_vec(Tape& tape, const TensorPtr& x) {
  if (x->rank() != 1) throw ShapeError("softmax_vec needs a vector");
  const int n = x->rows();
  auto out = out_like(x->shape, needs_grad(x));
  softmax_row(x->data.data(), out->data.data(), n);
  if (out->requires_grad) {
    tape.record([x, out, n] {
      double dotv = 0.0;
      for (int j = 0; j < n; ++j) dotv += out->grad[j] * out->data[j];
      for (int j = 0; j < n; ++j)
        x->grad[j] += out->data[j] * (out->grad[j] - dotv);
    });
  }
  return out;
}

// ---- structural -----------------------------------------------------------

TensorPtr transpose(Tape& tape, const TensorPtr& x) {
  if (x->rank() != 2) throw ShapeError("transpose needs a matrix");
  const int m = x->rows(), n = x->cols();
  auto out = out_like({n, m}, needs_grad(x));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->at(j, i) = x->at(i, j);
  if (out->requires_grad) {
    tape.record([x, out, m, n] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          x->grad[static_cast<size_t>(i) * n + j] +=
              out->grad[static_cast<size_t>(j) * m + i];
    });
  }
  return out;
}

TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<int> shape) {
  auto out = make_tensor(std::move(shape), needs_grad(x));
  if (out->size() != x->size())
    throw ShapeError("reshape element count mismatch: " + shape_str(*x) +
                     " -> " + shape_str(*out));
  out->data = x->data;
  if (out->requires_grad) {
    tape.record([x, out] {
      for (int i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const int n = parts[0]->rows();
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->rank() != 2 || p->rows() != n)
      throw ShapeError("concat_cols row mismatch");
    total += p->cols();
    rg = rg || p->requires_grad;
  }
  auto out = out_like({n, total}, rg);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p->cols(); ++j) out->at(i, off + j) = p->at(i, j);
    off += p->cols();
  }
  if (rg) {
    tape.record([parts, out, n, total] {
      int off2 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < p->cols(); ++j)
              p->grad[static_cast<size_t>(i) * p->cols() + j] +=
                  out->grad[static_cast<size_t>(i) * total + off2 + j];
        off2 += p->cols();
      }
    });
  }
  return out;
}

TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const int d = parts[0]->cols();
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->rank() != 2 || p->cols() != d)
      throw ShapeError("concat_rows column mismatch");
    total += p->rows();
    rg = rg || p->requires_grad;
  }
  auto out = out_like({total, d}, rg);
  int off = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(),
              out->data.begin() + static_cast<size_t>(off) * d);
    off += p->rows();
  }
  if (rg) {
    tape.record([parts, out, d] {
      int off2 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad)
          for (int i = 0; i < p->size(); ++i)
            p->grad[i] += out->grad[static_cast<size_t>(off2) * d + i];
        off2 += p->rows();
      }
    });
  }
  return out;
}

TensorPtr slice_rows(Tape& tape, const TensorPtr& x, int r0, int r1) {
  if (x->rank() != 2 || r0 < 0 || r1 > x->rows() || r0 >= r1)
    throw ShapeError("slice_rows [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") out of range for " +
                     shape_str(*x));
  const int d = x->cols();
  auto out = out_like({r1 - r0, d}, needs_grad(x));
  std::copy(x->data.begin() + static_cast<size_t>(r0) * d,
            x->data.begin() + static_cast<size_t>(r1) * d, out->data.begin());
  if (out->requires_grad) {
    tape.record([x, out, r0, d] {
      for (int i = 0; i < out->size(); ++i)
        x->grad[static_cast<size_t>(r0) * d + i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr gather_rows(Tape& tape, const TensorPtr& table,
                      const std::vector<int>& ids) {
  if (table->rank() != 2) throw ShapeError("gather_rows needs a matrix table");
  const int d = table->cols();
  for (int id : ids)
    if (id < 0 || id >= table->rows())
      throw DataError("embedding id " + std::to_string(id) +
                      " outside table with " + std::to_string(table->rows()) +
                      " rows");
  auto out = out_like({static_cast<int>(ids.size()), d}, needs_grad(table));
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(table->data.begin() + static_cast<size_t>(ids[i]) * d,
              table->data.begin() + static_cast<size_t>(ids[i] + 1) * d,
              out->data.begin() + i * d);
  if (out->requires_grad) {
    tape.record([table, out, ids, d] {
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          table->grad[static_cast<size_t>(ids[i]) * d + j] +=
              out->grad[i * d + j];
    });
  }
  return out;
}

// ---- pooling --------------------------------------------------------------

static TensorPtr max_pool_impl(Tape& tape, const TensorPtr& x,
                               const std::vector<char>& mask, bool over_rows) {
  if (x->rank() != 2) throw ShapeError("max pooling needs a matrix");
  const int sel_extent = over_rows ? x->rows() : x->cols();
  const int out_d = over_rows ? x->cols() : x->rows();
  if (!mask.empty() && static_cast<int>(mask.size()) != sel_extent)
    throw ShapeError("pooling mask length mismatch");
  bool any = mask.empty();
  for (char m : mask) any = any || m;
  if (!any) throw NumericError("max pooling over an empty selection");

  auto out = out_like({out_d}, needs_grad(x));
  std::vector<int> arg(out_d, -1);
  for (int j = 0; j < out_d; ++j) {
    double best = 0.0;
    int besti = -1;
    for (int i = 0; i < sel_extent; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const double v = over_rows ? x->at(i, j) : x->at(j, i);
      if (besti < 0 || v > best) {  // strict >: first index wins ties
        best = v;
        besti = i;
      }
    }
    out->data[j] = best;
    arg[j] = besti;
  }
  if (out->requires_grad) {
    tape.record([x, out, arg, over_rows] {
      for (int j = 0; j < out->size(); ++j) {
        if (over_rows)
          x->gat(arg[j], j) += out->grad[j];
        else
          x->gat(j, arg[j]) += out->grad[j];
      }
    });
  }
  return out;
}

TensorPtr max_over_rows(Tape& tape, const TensorPtr& x,
                        const std::vector<char>& mask) {
  return max_pool_impl(tape, x, mask, true);
}

TensorPtr max_pool_cols(Tape& tape, const TensorPtr& x,
                        const std::vector<char>& mask) {
  return max_pool_impl(tape, x, mask, false);
}

TensorPtr dot(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "dot");
  auto out = out_like({1}, needs_grad(a) || needs_grad(b));
  double s = 0.0;
  for (int i = 0; i < a->size(); ++i) s += a->data[i] * b->data[i];
  out->data[0] = s;
  if (out->requires_grad) {
    tape.record([a, b, out] {
      const double g = out->grad[0];
      if (a->requires_grad)
        for (int i = 0; i < a->size(); ++i) a->grad[i] += g * b->data[i];
      if (b->requires_grad)
        for (int i = 0; i < b->size(); ++i) b->grad[i] += g * a->data[i];
    });
  }
  return out;
}

// ---- stochastic / regularization ------------------------------------------

TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, bool training,
                  Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must be in [0,1), got " +
                      std::to_string(p));
  if (!training || p == 0.0) {
    auto out = out_like(x->shape, needs_grad(x));
    out->data = x->data;
    if (out->requires_grad) {
      tape.record([x, out] {
        for (int i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
      });
    }
    return out;
  }
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(x->size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < x->size(); ++i)
    (*mask)[i] = unif(rng) < keep ? 1.0 / keep : 0.0;
  auto out = out_like(x->shape, needs_grad(x));
  for (int i = 0; i < out->size(); ++i) out->data[i] = x->data[i] * (*mask)[i];
  if (out->requires_grad) {
    tape.record([x, out, mask] {
      for (int i = 0; i < out->size(); ++i)
        x->grad[i] += out->grad[i] * (*mask)[i];
    });
  }
  return out;
}

TensorPtr sum_squares(Tape& tape, const TensorPtr& x) {
  auto out = out_like({1}, needs_grad(x));
  double s = 0.0;
  for (int i = 0; i < x->size(); ++i) s += x->data[i] * x->data[i];
  out->data[0] = s;
  if (out->requires_grad) {
    tape.record([x, out] {
      const double g = out->grad[0];
      for (int i = 0; i < x->size(); ++i) x->grad[i] += g * 2.0 * x->data[i];
    });
  }
  return out;
}

TensorPtr nll(Tape& tape, const TensorPtr& probs, int gold, long* clamp_hits) {
  if (gold < 0 || gold >= probs->size())
    throw DataError("gold label " + std::to_string(gold) +
                    " outside distribution of size " +
                    std::to_string(probs->size()));
  constexpr double kEps = 1e-12;
  double p = probs->data[gold];
  bool clamped = p < kEps;
  if (clamped) {
    p = kEps;
    if (clamp_hits) ++(*clamp_hits);
  }
  auto out = out_like({1}, needs_grad(probs));
  out->data[0] = -std::log(p);
  if (out->requires_grad) {
    tape.record([probs, out, gold, p, clamped] {
      if (!clamped) probs->grad[gold] += out->grad[0] * (-1.0 / p);
    });
  }
  return out;
}

TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
  if (x->rank() != 2 || x->cols() != gamma->size() ||
      gamma->size() != beta->size())
    throw ShapeError("layer_norm shape mismatch: " + shape_str(*x));
  const int b = x->rows(), d = x->cols();
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(b) * d);
  auto inv_std = std::make_shared<std::vector<double>>(b);
  auto out = out_like(x->shape, needs_grad(x) || gamma->requires_grad);
  for (int i = 0; i < b; ++i) {
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += x->at(i, j);
    m /= d;
    double v = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = x->at(i, j) - m;
      v += c * c;
    }
    v /= d;
    (*inv_std)[i] = 1.0 / std::sqrt(v + eps);
    for (int j = 0; j < d; ++j) {
      const double h = (x->at(i, j) - m) * (*inv_std)[i];
      (*xhat)[static_cast<size_t>(i) * d + j] = h;
      out->at(i, j) = gamma->data[j] * h + beta->data[j];
    }
  }
  if (out->requires_grad) {
    tape.record([x, out, gamma, beta, xhat, inv_std, b, d] {
      for (int i = 0; i < b; ++i) {
        double sum_gy = 0.0, sum_gyh = 0.0;
        for (int j = 0; j < d; ++j) {
          const double gy =
              out->grad[static_cast<size_t>(i) * d + j] * gamma->data[j];
          const double h = (*xhat)[static_cast<size_t>(i) * d + j];
          sum_gy += gy;
          sum_gyh += gy * h;
        }
        for (int j = 0; j < d; ++j) {
          const double go = out->grad[static_cast<size_t>(i) * d + j];
          const double h = (*xhat)[static_cast<size_t>(i) * d + j];
          if (gamma->requires_grad) gamma->grad[j] += go * h;
          if (beta->requires_grad) beta->grad[j] += go;
          if (x->requires_grad) {
            const double gy = go * gamma->data[j];
            x->grad[static_cast<size_t>(i) * d + j] +=
                (*inv_std)[i] * (gy - (sum_gy + h * sum_gyh) / d);
          }
        }
      }
    });
  }
  return out;
}

// ---- batch norm -----------------------------------------------------------

BatchNorm::BatchNorm(int features) {
  gamma = make_tensor({features}, std::vector<double>(features, 1.0), true);
  beta = make_tensor({features}, true);
  running_mean.assign(features, 0.0);
  running_var.assign(features, 1.0);
}

TensorPtr BatchNorm::forward(Tape& tape, const TensorPtr& x, bool training) {
  if (x->rank() != 2 || x->cols() != gamma->size())
    throw ShapeError("batch_norm expects [batch x " +
                     std::to_string(gamma->size()) + "], got " + shape_str(*x));
  const int b = x->rows(), d = x->cols();
  if (training && b < 2)
    throw ConfigError("batch_norm training mode needs batch >= 2, got " +
                      std::to_string(b));

  auto mean = std::make_shared<std::vector<double>>(d, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(d, 0.0);
  if (training) {
    for (int j = 0; j < d; ++j) {
      double m = 0.0;
      for (int i = 0; i < b; ++i) m += x->at(i, j);
      m /= b;
      double v = 0.0;
      for (int i = 0; i < b; ++i) {
        const double c = x->at(i, j) - m;
        v += c * c;
      }
      v /= b;
      (*mean)[j] = m;
      (*inv_std)[j] = 1.0 / std::sqrt(v + eps);
      running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * m;
      running_var[j] = (1.0 - momentum) * running_var[j] + momentum * v;
    }
  } else {
    for (int j = 0; j < d; ++j) {
      (*mean)[j] = running_mean[j];
      (*inv_std)[j] = 1.0 / std::sqrt(running_var[j] + eps);
    }
  }

  // xhat kept for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(
      static_cast<size_t>(b) * d);
  auto out = out_like(x->shape, needs_grad(x) || gamma->requires_grad);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j) {
      const double h = (x->at(i, j) - (*mean)[j]) * (*inv_std)[j];
      (*xhat)[static_cast<size_t>(i) * d + j] = h;
      out->at(i, j) = gamma->data[j] * h + beta->data[j];
    }

  if (out->requires_grad) {
    auto g = gamma;
    auto bt = beta;
    tape.record([x, out, g, bt, xhat, inv_std, b, d, training] {
      for (int j = 0; j < d; ++j) {
        double sum_gy = 0.0, sum_gyh = 0.0;
        for (int i = 0; i < b; ++i) {
          const double gy = out->grad[static_cast<size_t>(i) * d + j];
          sum_gy += gy;
          sum_gyh += gy * (*xhat)[static_cast<size_t>(i) * d + j];
        }
        if (g->requires_grad) g->grad[j] += sum_gyh;
        if (bt->requires_grad) bt->grad[j] += sum_gy;
        if (x->requires_grad) {
          const double gj = g->data[j] * (*inv_std)[j];
          for (int i = 0; i < b; ++i) {
            const double gy = out->grad[static_cast<size_t>(i) * d + j];
            const double h = (*xhat)[static_cast<size_t>(i) * d + j];
            double gx = gy;
            if (training) gx -= (sum_gy + h * sum_gyh) / b;
            x->grad[static_cast<size_t>(i) * d + j] += gj * gx;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace escgcn
