// Compares the OpenMP kernels against their serial references: checks
// agreement, then reports timings at model-relevant shapes.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "iajepa/kernels.hpp"
#include "iajepa/reference.hpp"
#include "iajepa/rng.hpp"
#include "iajepa/tensor.hpp"

using namespace iajepa;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void bench_matmul(int m, int n, int k) {
    Rng rng(1);
    Tensor<float> a({m, k}), b({k, n}), c1({m, n}), c2({m, n});
    for (auto& v : a.data) v = float(rng.uniform(-1, 1));
    for (auto& v : b.data) v = float(rng.uniform(-1, 1));

    ref::matmul(a.data.data(), b.data.data(), c1.data.data(), m, n, k, false, false);
    kern::matmul(a.data.data(), b.data.data(), c2.data.data(), m, n, k, false, false);
    double maxdiff = 0.0;
    for (int64_t i = 0; i < c1.numel(); ++i) maxdiff = std::max(maxdiff, std::abs(double(c1.data[i]) - double(c2.data[i])));

    const double ts = time_best_of(3, [&] { ref::matmul(a.data.data(), b.data.data(), c1.data.data(), m, n, k, false, false); });
    const double tp = time_best_of(3, [&] { kern::matmul(a.data.data(), b.data.data(), c2.data.data(), m, n, k, false, false); });
    const double flops = 2.0 * m * n * k;
    std::printf("matmul %4dx%4dx%4d  serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  %6.2f GFLOP/s  maxdiff %.2e\n",
                m, n, k, ts * 1e3, tp * 1e3, ts / tp, flops / tp / 1e9, maxdiff);
}

void bench_rowops(int rows, int cols) {
    Rng rng(2);
    Tensor<float> x({rows, cols}), y1({rows, cols}), y2({rows, cols});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    const double ts = time_best_of(3, [&] { ref::softmax_rows(x.data.data(), y1.data.data(), rows, cols); });
    const double tp = time_best_of(3, [&] { kern::softmax_rows(x.data.data(), y2.data.data(), rows, cols); });
    std::printf("softmax %5dx%4d       serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  bitwise %s\n", rows,
                cols, ts * 1e3, tp * 1e3, ts / tp, y1.data == y2.data ? "equal" : "DIFFER");
}

}  // namespace

int main() {
    std::printf("threads available: %d\n", kern::max_threads());
    bench_matmul(288, 192, 192);    // token mixing at full width
    bench_matmul(288, 768, 192);    // feed-forward expansion
    bench_matmul(288, 192, 1536);   // tubelet embedding
    bench_matmul(1024, 1024, 1024);
    bench_rowops(8 * 288, 288);
    bench_rowops(4096, 512);
    return 0;
}
