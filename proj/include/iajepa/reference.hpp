// Serial reference implementations of the parallel kernels.
//
// Deliberately naive: index-by-index loops with no tiling or threading.
// Tests require kern::* to match these bit for bit; the benchmark target
// reports the speed gap.
#pragma once

#include <cmath>
#include <cstdint>

namespace iajepa::ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int n, int k, bool ta, bool tb) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) c[int64_t(i) * n + j] = T(0);
        for (int l = 0; l < k; ++l) {
            const T av = ta ? a[int64_t(l) * m + i] : a[int64_t(i) * k + l];
            for (int j = 0; j < n; ++j) {
                const T bv = tb ? b[int64_t(j) * k + l] : b[int64_t(l) * n + j];
                c[int64_t(i) * n + j] += av * bv;
            }
        }
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols) {
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

template <typename T>
void layer_norm_rows(const T* x, const T* gamma, const T* beta, T* y, T* mu, T* inv, int rows, int cols, T eps) {
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

}  // namespace iajepa::ref
