#include "radreport/kernels.hpp"

#include <cmath>
#include <vector>

#include "radreport/fastmath.hpp"

namespace radreport::kern {

template <typename S>
void matmul(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        S* __restrict__ ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = S(0);
        const S* __restrict__ ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const S aip = ai[p];
            const S* __restrict__ bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

template <typename S>
void matmul_nt(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int64_t m, int64_t k, int64_t n) {
    // Transposing B up front turns the row-dot formulation into the same
    // axpy loops as matmul; plain dot products cannot be vectorized
    // without reassociating the reduction.
    std::vector<S> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = b[j * k + p];
    }
    matmul(a, bt.data(), c, m, k, n);
}

template <typename S>
void matmul_tn_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int64_t m, int64_t k, int64_t n) {
    // A transposed up front so each output row stays register/L1 resident
    // while B streams once per row. Threads own whole C rows; the inner
    // accumulation order over i is fixed, so results do not depend on the
    // thread count.
    std::vector<S> at(static_cast<size_t>(k * m));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) at[static_cast<size_t>(p * m + i)] = a[i * k + p];
    }
    const S* __restrict__ atp = at.data();
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < k; ++p) {
        S* __restrict__ cp = c + p * n;
        const S* __restrict__ arow = atp + p * m;
        for (int64_t i = 0; i < m; ++i) {
            const S aip = arow[i];
            const S* __restrict__ bi = b + i * n;
            for (int64_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

template <typename S>
void add_bias(S* __restrict__ y, const S* __restrict__ bias, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        S* __restrict__ yi = y + i * n;
        for (int64_t j = 0; j < n; ++j) yi[j] += bias[j];
    }
}

template <typename S>
void colsum_acc(const S* __restrict__ a, S* __restrict__ out, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < n; ++j) {
        S acc = S(0);
        for (int64_t i = 0; i < m; ++i) acc += a[i * n + j];
        out[j] += acc;
    }
}

template <typename S>
void layernorm(const S* __restrict__ x, const S* __restrict__ gamma, const S* __restrict__ beta, S* __restrict__ y, S* __restrict__ mean, S* __restrict__ rstd,
               int64_t m, int64_t h, S eps) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const S* __restrict__ xi = x + i * h;
        S mu = S(0);
        for (int64_t j = 0; j < h; ++j) mu += xi[j];
        mu /= S(h);
        S var = S(0);
        for (int64_t j = 0; j < h; ++j) {
            const S d = xi[j] - mu;
            var += d * d;
        }
        var /= S(h);
        const S rs = S(1) / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        S* __restrict__ yi = y + i * h;
        for (int64_t j = 0; j < h; ++j) yi[j] = gamma[j] * ((xi[j] - mu) * rs) + beta[j];
    }
}

template <typename S>
void layernorm_backward_input(const S* __restrict__ dy, const S* __restrict__ x, const S* __restrict__ gamma, const S* __restrict__ mean,
                              const S* __restrict__ rstd, S* __restrict__ dx, int64_t m, int64_t h) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const S* __restrict__ dyi = dy + i * h;
        const S* __restrict__ xi = x + i * h;
        const S mu = mean[i];
        const S rs = rstd[i];
        S sum_dg = S(0);
        S sum_dg_xhat = S(0);
        for (int64_t j = 0; j < h; ++j) {
            const S g = dyi[j] * gamma[j];
            sum_dg += g;
            sum_dg_xhat += g * (xi[j] - mu) * rs;
        }
        const S a = sum_dg / S(h);
        const S b = sum_dg_xhat / S(h);
        S* __restrict__ dxi = dx + i * h;
        for (int64_t j = 0; j < h; ++j) {
            const S xhat = (xi[j] - mu) * rs;
            dxi[j] += rs * (dyi[j] * gamma[j] - a - xhat * b);
        }
    }
}

template <typename S>
void layernorm_backward_params(const S* __restrict__ dy, const S* __restrict__ x, const S* __restrict__ mean, const S* __restrict__ rstd,
                               S* __restrict__ dgamma, S* __restrict__ dbeta, int64_t m, int64_t h) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < h; ++j) {
        S dg = S(0);
        S db = S(0);
        for (int64_t i = 0; i < m; ++i) {
            const S xhat = (x[i * h + j] - mean[i]) * rstd[i];
            dg += dy[i * h + j] * xhat;
            db += dy[i * h + j];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

template <typename S>
void gelu(const S* __restrict__ x, S* __restrict__ y, int64_t n) {
    const S inv_sqrt2 = S(0.7071067811865475);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        y[i] = S(0.5) * x[i] * (S(1) + fastmath::fast_erf(x[i] * inv_sqrt2));
    }
}

template <typename S>
void gelu_backward(const S* __restrict__ dy, const S* __restrict__ x, S* __restrict__ dx, int64_t n) {
    const S inv_sqrt2 = S(0.7071067811865475);
    const S inv_sqrt2pi = S(0.3989422804014327);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const S cdf = S(0.5) * (S(1) + fastmath::fast_erf(x[i] * inv_sqrt2));
        const S pdf = inv_sqrt2pi * fastmath::fast_exp(S(-0.5) * x[i] * x[i]);
        dx[i] += dy[i] * (cdf + x[i] * pdf);
    }
}

namespace serial {

template <typename S>
void matmul(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

template <typename S>
void matmul_nt(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = acc;
        }
    }
}

template <typename S>
void matmul_tn_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        for (int64_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (int64_t i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
            c[p * n + j] += acc;
        }
    }
}

template <typename S>
void layernorm(const S* __restrict__ x, const S* __restrict__ gamma, const S* __restrict__ beta, S* __restrict__ y, S* __restrict__ mean, S* __restrict__ rstd,
               int64_t m, int64_t h, S eps) {
    for (int64_t i = 0; i < m; ++i) {
        S mu = S(0);
        for (int64_t j = 0; j < h; ++j) mu += x[i * h + j];
        mu /= S(h);
        S var = S(0);
        for (int64_t j = 0; j < h; ++j) var += (x[i * h + j] - mu) * (x[i * h + j] - mu);
        var /= S(h);
        const S rs = S(1) / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        for (int64_t j = 0; j < h; ++j) {
            y[i * h + j] = gamma[j] * ((x[i * h + j] - mu) * rs) + beta[j];
        }
    }
}

template <typename S>
void gelu(const S* __restrict__ x, S* __restrict__ y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        y[i] = S(0.5) * x[i] * (S(1) + std::erf(x[i] * S(0.7071067811865475)));
    }
}

}  // namespace serial

#define RADREPORT_INSTANTIATE_KERNELS(S)                                                     \
    template void matmul<S>(const S*, const S*, S*, int64_t, int64_t, int64_t);              \
    template void matmul_nt<S>(const S*, const S*, S*, int64_t, int64_t, int64_t);           \
    template void matmul_tn_acc<S>(const S*, const S*, S*, int64_t, int64_t, int64_t);       \
    template void add_bias<S>(S*, const S*, int64_t, int64_t);                               \
    template void colsum_acc<S>(const S*, S*, int64_t, int64_t);                             \
    template void layernorm<S>(const S*, const S*, const S*, S*, S*, S*, int64_t, int64_t,   \
                               S);                                                           \
    template void layernorm_backward_input<S>(const S*, const S*, const S*, const S*,        \
                                              const S*, S*, int64_t, int64_t);               \
    template void layernorm_backward_params<S>(const S*, const S*, const S*, const S*, S*,   \
                                               S*, int64_t, int64_t);                        \
    template void gelu<S>(const S*, S*, int64_t);                                            \
    template void gelu_backward<S>(const S*, const S*, S*, int64_t);                         \
    template void serial::matmul<S>(const S*, const S*, S*, int64_t, int64_t, int64_t);      \
    template void serial::matmul_nt<S>(const S*, const S*, S*, int64_t, int64_t, int64_t);   \
    template void serial::matmul_tn_acc<S>(const S*, const S*, S*, int64_t, int64_t,         \
                                           int64_t);                                         \
    template void serial::layernorm<S>(const S*, const S*, const S*, S*, S*, S*, int64_t,    \
                                       int64_t, S);                                          \
    template void serial::gelu<S>(const S*, S*, int64_t);

RADREPORT_INSTANTIATE_KERNELS(float)
RADREPORT_INSTANTIATE_KERNELS(double)

#undef RADREPORT_INSTANTIATE_KERNELS

}  // namespace radreport::kern
