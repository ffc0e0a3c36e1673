#pragma once

#include <cstddef>

namespace gnndiff::kernels {

/// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], all row-major.
/// A is stored [m,k] (or [k,m] when trans_a), B is stored [k,n] (or [n,k] when trans_b).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float* c, bool accumulate);

}  // namespace gnndiff::kernels
