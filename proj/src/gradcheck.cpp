#include "strforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace strforge {

GradCheckReport grad_check(const TensorFn& f, const std::vector<Tensor>& inputs, double eps, double tol,
                           std::size_t max_probes) {
  std::vector<Tensor> args = inputs;
  for (auto& t : args) t.zero_grad();
  Tensor loss = f(args);
  if (loss.numel() != 1) throw ShapeError("grad_check needs a scalar function, got " + shape_str(loss.shape()));
  loss.backward();

  GradCheckReport report;
  for (std::size_t k = 0; k < args.size(); ++k) {
    Tensor& x = args[k];
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    const std::size_t n = x.numel();
    const std::size_t step = (max_probes > 0 && n > max_probes) ? (n + max_probes - 1) / max_probes : 1;
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + eps;
        plus = f(args).item();
        values[i] = saved - eps;
        minus = f(args).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-5});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        if (rel >= report.max_rel_error) {
          report.worst_input = k;
          report.worst_index = i;
          report.analytic = analytic[i];
          report.numeric = numeric;
        }
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps, double tol) {
  return grad_check([&f](const std::vector<Tensor>& a) { return f(a[0]); }, {x}, eps, tol);
}

}  // namespace strforge
