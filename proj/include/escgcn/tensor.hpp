#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace escgcn {

// All stochastic ops draw from one generator owned by the session,
// so runs are bit-reproducible per seed.
using Rng = std::mt19937_64;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense double tensor, rank <= 2 in practice (vectors and matrices).
/// grad is allocated iff requires_grad.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  int size() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
  double& gat(int r, int c) { return grad[static_cast<size_t>(r) * cols() + c]; }

  void zero_grad();
  void ensure_grad();
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<int> shape, std::vector<double> values,
                      bool requires_grad = false);
std::string shape_str(const Tensor& t);

/// Record of executed differentiable ops; backward replays them in exact
/// reverse execution order, accumulating (never overwriting) grads.
class Tape {
 public:
  void record(std::function<void()> backward_op) {
    ops_.push_back(std::move(backward_op));
  }
  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must be a scalar.
  void backward(const TensorPtr& loss);
  void clear() { ops_.clear(); }
  size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// ---- forward/backward ops -------------------------------------------------

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr matvec(Tape& tape, const TensorPtr& a, const TensorPtr& v);
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& a, double c);
/// x: [n x d], v: [d]; v is added to every row.
TensorPtr add_row_broadcast(Tape& tape, const TensorPtr& x, const TensorPtr& v);
TensorPtr relu(Tape& tape, const TensorPtr& x);
TensorPtr tanh_act(Tape& tape, const TensorPtr& x);
TensorPtr sigmoid(Tape& tape, const TensorPtr& x);
/// Max-shifted row softmax; each output row sums to 1.
TensorPtr softmax_rows(Tape& tape, const TensorPtr& x);
TensorPtr softmax_vec(Tape& tape, const TensorPtr& x);
TensorPtr transpose(Tape& tape, const TensorPtr& x);
TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<int> shape);
TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts);
TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts);
/// Rows [r0, r1) of x.
TensorPtr slice_rows(Tape& tape, const TensorPtr& x, int r0, int r1);
/// table: [V x d]; out row i = table row ids[i]. Backward scatter-adds.
TensorPtr gather_rows(Tape& tape, const TensorPtr& table,
                      const std::vector<int>& ids);
/// Per-column max over a nonempty subset of rows; ties go to the first index.
/// mask empty = all rows selected.
TensorPtr max_over_rows(Tape& tape, const TensorPtr& x,
                        const std::vector<char>& mask = {});
/// Per-row max over a nonempty subset of columns (x is [d x n] -> [d]).
TensorPtr max_pool_cols(Tape& tape, const TensorPtr& x,
                        const std::vector<char>& mask = {});
TensorPtr dot(Tape& tape, const TensorPtr& a, const TensorPtr& b);
/// Inverted dropout: training scales survivors by 1/(1-p); inference = identity.
TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, bool training,
                  Rng& rng);
TensorPtr sum_squares(Tape& tape, const TensorPtr& x);
/// probs: a distribution vector; returns -log(probs[gold]) clamped at 1e-12.
/// clamp_hits, when given, counts clamp events.
TensorPtr nll(Tape& tape, const TensorPtr& probs, int gold,
              long* clamp_hits = nullptr);

/// Per-row standardization with learned per-feature scale/shift.
TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps = 1e-5);

/// Per-feature batch normalization with running statistics.
struct BatchNorm {
  TensorPtr gamma;  // scale
  TensorPtr beta;   // shift
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNorm(int features);
  /// x: [batch x d]. Training requires batch >= 2 and updates running stats.
  TensorPtr forward(Tape& tape, const TensorPtr& x, bool training);
};

bool all_finite(const Tensor& t);

}  // namespace escgcn
