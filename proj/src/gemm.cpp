#include "luxforge/gemm.hpp"

#include <Eigen/Core>

namespace luxforge::detail {

namespace {

template <typename S>
using MatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
    Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename S>
using MutMatMap = Eigen::Map<
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
    Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename S>
void gemm_impl(bool trans_a, bool trans_b, int m, int n, int k, S alpha,
               const S* a, int lda, const S* b, int ldb, S beta, S* c,
               int ldc) {
  MatMap<S> ma(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  MatMap<S> mb(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  MutMatMap<S> mc(c, m, n, Eigen::OuterStride<>(ldc));

  if (beta == S(0))
    mc.setZero();
  else if (beta != S(1))
    mc *= beta;

  if (!trans_a && !trans_b)
    mc.noalias() += alpha * (ma * mb);
  else if (trans_a && !trans_b)
    mc.noalias() += alpha * (ma.transpose() * mb);
  else if (!trans_a && trans_b)
    mc.noalias() += alpha * (ma * mb.transpose());
  else
    mc.noalias() += alpha * (ma.transpose() * mb.transpose());
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace luxforge::detail
