#pragma once

#include <cstddef>

namespace strforge::detail {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);

/// Pins the BLAS backend to a fixed thread count so reductions are reproducible.
void set_blas_threads(int threads);

}  // namespace strforge::detail
