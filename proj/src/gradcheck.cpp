#include "escgcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace escgcn {

double check_gradients(const std::vector<TensorPtr>& params,
                       const std::function<TensorPtr(Tape&)>& loss_fn,
                       double h, int max_coords, Rng* rng) {
  if (h <= 0.0) throw ConfigError("gradcheck step must be positive");

  for (const auto& p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  {
    Tape tape;
    auto loss = loss_fn(tape);
    if (!all_finite(*loss)) throw NumericError("gradcheck: non-finite loss");
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape tape;
    auto loss = loss_fn(tape);
    if (!all_finite(*loss))
      throw NumericError("gradcheck: non-finite loss at perturbed point");
    return loss->data[0];
  };

  double max_rel = 0.0;
  for (const auto& p : params) {
    std::vector<int> coords;
    if (p->size() <= max_coords) {
      coords.resize(p->size());
      for (int i = 0; i < p->size(); ++i) coords[i] = i;
    } else {
      std::uniform_int_distribution<int> pick(0, p->size() - 1);
      Rng fallback(12345);
      Rng& r = rng ? *rng : fallback;
      for (int i = 0; i < max_coords; ++i) coords.push_back(pick(r));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (int c : coords) {
      const double orig = p->data[c];
      p->data[c] = orig + h;
      const double fp = eval();
      p->data[c] = orig - h;
      const double fm = eval();
      p->data[c] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p->grad[c];
      const double denom =
          std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace escgcn
