#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "strforge/tensor.hpp"

namespace strforge::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Distinct values spaced well apart, shuffled; keeps max/relu kinks away
// from finite-difference probes.
inline Tensor spaced_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 0.037 * static_cast<double>(i) + 0.0013;
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Owning copy; avoids dangling spans over temporaries in range-for loops.
inline std::vector<double> values(const Tensor& t) {
  auto d = t.data();
  return {d.begin(), d.end()};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace strforge::testing
