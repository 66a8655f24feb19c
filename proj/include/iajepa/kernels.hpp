// OpenMP-parallel numeric kernels for the hot inner loops.
//
// Determinism contract: every output element is accumulated by exactly one
// thread in a fixed index order, so results are bit-identical regardless of
// thread count. No omp reductions over shared accumulators.
//
// Serial reference implementations live in reference.hpp and are compared
// against these in tests and in the kernel benchmark.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace iajepa::kern {

// Work threshold below which spawning threads costs more than it saves.
constexpr int64_t kParallelGrain = 16 * 1024;

// C[m,n] = op_a(A) * op_b(B) where op transposes when the flag is set.
// A is [m,k] (or [k,m] if ta), B is [k,n] (or [n,k] if tb).
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int n, int k, bool ta, bool tb) {
    const int64_t work = int64_t(m) * n * k;
    if (!ta && !tb) {
        // ikj: row of C accumulates rank-1 updates in fixed k order.
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
        for (int i = 0; i < m; ++i) {
            T* ci = c + int64_t(i) * n;
            for (int j = 0; j < n; ++j) ci[j] = T(0);
            const T* ai = a + int64_t(i) * k;
            for (int l = 0; l < k; ++l) {
                const T s = ai[l];
                const T* bl = b + int64_t(l) * n;
                for (int j = 0; j < n; ++j) ci[j] += s * bl[j];
            }
        }
    } else if (!ta && tb) {
        // C[i,j] = dot(A[i,:], B[j,:])
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
        for (int i = 0; i < m; ++i) {
            const T* ai = a + int64_t(i) * k;
            T* ci = c + int64_t(i) * n;
            for (int j = 0; j < n; ++j) {
                const T* bj = b + int64_t(j) * k;
                T acc = T(0);
                for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
                ci[j] = acc;
            }
        }
    } else if (ta && !tb) {
        // A stored [k,m]; C[i,j] = sum_l A[l,i] * B[l,j]
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
        for (int i = 0; i < m; ++i) {
            T* ci = c + int64_t(i) * n;
            for (int j = 0; j < n; ++j) ci[j] = T(0);
            for (int l = 0; l < k; ++l) {
                const T s = a[int64_t(l) * m + i];
                const T* bl = b + int64_t(l) * n;
                for (int j = 0; j < n; ++j) ci[j] += s * bl[j];
            }
        }
    } else {
        // A stored [k,m], B stored [n,k]; C[i,j] = sum_l A[l,i] * B[j,l]
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
        for (int i = 0; i < m; ++i) {
            T* ci = c + int64_t(i) * n;
            for (int j = 0; j < n; ++j) {
                const T* bj = b + int64_t(j) * k;
                T acc = T(0);
                for (int l = 0; l < k; ++l) acc += a[int64_t(l) * m + i] * bj[l];
                ci[j] = acc;
            }
        }
    }
}

// Row-wise softmax over the last axis: y[r,:] = softmax(x[r,:]).
template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols) {
#pragma omp parallel for schedule(static) if (int64_t(rows) * cols > kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + int64_t(r) * cols;
        T* yr = y + int64_t(r) * cols;
        T mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        T sum = T(0);
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

// Row-wise layer norm with affine: y = gamma * (x - mu) / sqrt(var + eps) + beta.
// Writes per-row mean and inverse stddev into mu/inv for the backward pass.
template <typename T>
void layer_norm_rows(const T* x, const T* gamma, const T* beta, T* y, T* mu, T* inv, int rows, int cols, T eps) {
#pragma omp parallel for schedule(static) if (int64_t(rows) * cols > kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + int64_t(r) * cols;
        T* yr = y + int64_t(r) * cols;
        T m = T(0);
        for (int j = 0; j < cols; ++j) m += xr[j];
        m /= T(cols);
        T var = T(0);
        for (int j = 0; j < cols; ++j) {
            const T d = xr[j] - m;
            var += d * d;
        }
        var /= T(cols);
        const T iv = T(1) / std::sqrt(var + eps);
        mu[r] = m;
        inv[r] = iv;
        for (int j = 0; j < cols; ++j) yr[j] = gamma[j] * ((xr[j] - m) * iv) + beta[j];
    }
}

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace iajepa::kern
