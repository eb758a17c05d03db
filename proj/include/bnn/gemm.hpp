#pragma once

#include <cstddef>

namespace bnn {

enum class Trans { no, yes };

/// C[M x N] = op(A) * op(B), or C += op(A) * op(B) when `accumulate` is set.
/// All matrices are dense row-major; op(A) is M x K and op(B) is K x N.
/// A transposed operand is stored in its untransposed layout (K x M, N x K).
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace bnn
