#pragma once

#include <functional>
#include <vector>

#include "escgcn/tensor.hpp"

namespace escgcn {

/// Central-difference check of tape gradients.
///
/// loss_fn must rebuild the forward pass from the current parameter values on
/// every call (it receives a fresh tape). Samples up to max_coords coordinates
/// per parameter and returns the maximum relative error
/// |analytic - numeric| / max(|analytic| + |numeric|, 1e-8).
double check_gradients(const std::vector<TensorPtr>& params,
                       const std::function<TensorPtr(Tape&)>& loss_fn,
                       double h = 1e-5, int max_coords = 12,
                       Rng* rng = nullptr);

}  // namespace escgcn
