#include "kernels.hpp"

#include <algorithm>
#include <thread>
#include <vector>

#include "dnl/ops.hpp"

namespace dnl::kernels {

namespace {
constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;
}

void parallel_for(std::size_t n, std::size_t cost_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const std::size_t threads = std::min(kernel_threads(), n);
    if (threads <= 1 || n * std::max<std::size_t>(cost_per_item, 1) < kParallelThreshold) {
        body(0, n);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (std::size_t t = 1; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b,
             Scalar* c) {
    parallel_for(m, n * k, [=](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            Scalar* crow = c + i * n;
            const Scalar* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const Scalar av = arow[p];
                if (av == Scalar{0}) continue;
                const Scalar* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b,
             Scalar* c) {
    // Transposing b lets the inner loop run over contiguous columns.
    std::vector<Scalar> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(m, n, k, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b,
             Scalar* c) {
    parallel_for(m, n * k, [=](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            Scalar* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const Scalar av = a[p * m + i];
                if (av == Scalar{0}) continue;
                const Scalar* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

}  // namespace dnl::kernels
