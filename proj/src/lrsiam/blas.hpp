#pragma once

#include <cstddef>

namespace lrsiam::blas {

/// Row-major C = alpha * op(A) * op(B) + beta * C, dispatched to the BLAS
/// routine matching T (float or double).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

/// Pins the BLAS backend to one thread so repeated runs are bit-identical.
void set_single_threaded();

}  // namespace lrsiam::blas
