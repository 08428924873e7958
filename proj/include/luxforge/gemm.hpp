#pragma once

namespace luxforge::detail {

// C = alpha * op(A) * op(B) + beta * C on row-major buffers. Convolution
// accumulates in the tensor storage type: the float instantiation takes the
// fast path, the double one doubles as the high-precision oracle mode.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);

}  // namespace luxforge::detail
