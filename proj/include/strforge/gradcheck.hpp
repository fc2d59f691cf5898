#pragma once

#include <functional>
#include <vector>

#include "strforge/tensor.hpp"

namespace strforge {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares recorded gradients of the scalar `f(inputs)` against central
/// differences. Relative error is |a - n| / max(|a|, |n|, 1e-5). Only inputs
/// with requires_grad set are perturbed; `max_probes` > 0 caps the number of
/// perturbed entries per input (evenly strided).
GradCheckReport grad_check(const TensorFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5,
                           double tol = 1e-4, std::size_t max_probes = 0);

/// Single-input convenience overload.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5, double tol = 1e-4);

}  // namespace strforge
