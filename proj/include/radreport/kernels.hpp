#pragma once

#include <cstdint>

namespace radreport::kern {

// Primary kernels. Parallel loops are arranged so that every output
// element is produced by exactly one thread with a fixed inner summation
// order, which makes results identical for any OMP thread count.
//
// All matrices are dense row-major.

// C[M,N] = A[M,K] * B[K,N]
template <typename S>
void matmul(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n);

// C[M,N] = A[M,K] * B^T, with B stored as [N,K]
template <typename S>
void matmul_nt(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n);

// C[K,N] += A^T * B, with A stored as [M,K], B as [M,N]
template <typename S>
void matmul_tn_acc(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n);

// y[i,:] += bias
template <typename S>
void add_bias(S* y, const S* bias, int64_t m, int64_t n);

// out[j] += sum_i a[i,j]
template <typename S>
void colsum_acc(const S* a, S* out, int64_t m, int64_t n);

// Row-wise layer normalization with cached statistics for the backward
// pass: y = gamma * (x - mean) * rstd + beta.
template <typename S>
void layernorm(const S* x, const S* gamma, const S* beta, S* y, S* mean, S* rstd,
               int64_t m, int64_t h, S eps);

template <typename S>
void layernorm_backward_input(const S* dy, const S* x, const S* gamma, const S* mean,
                              const S* rstd, S* dx, int64_t m, int64_t h);

template <typename S>
void layernorm_backward_params(const S* dy, const S* x, const S* mean, const S* rstd,
                               S* dgamma, S* dbeta, int64_t m, int64_t h);

// Exact (erf-based) GELU.
template <typename S>
void gelu(const S* x, S* y, int64_t n);

template <typename S>
void gelu_backward(const S* dy, const S* x, S* dx, int64_t n);

namespace serial {

// Naive reference implementations used by the test suite and the kernel
// benchmark. Deliberately written as plain dot-product / per-element
// loops, independent of the parallel formulations above.

template <typename S>
void matmul(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n);

template <typename S>
void matmul_nt(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n);

template <typename S>
void matmul_tn_acc(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n);

template <typename S>
void layernorm(const S* x, const S* gamma, const S* beta, S* y, S* mean, S* rstd,
               int64_t m, int64_t h, S eps);

template <typename S>
void gelu(const S* x, S* y, int64_t n);

}  // namespace serial

}  // namespace radreport::kern
