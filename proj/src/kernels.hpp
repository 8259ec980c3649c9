#pragma once

// Internal dense kernels shared by the op implementations.

#include <cstddef>
#include <functional>

#include "dnl/tensor.hpp"

namespace dnl::kernels {

// Runs body(i) for i in [0, n). Work is split into contiguous chunks, each
// index handled by exactly one thread, so results do not depend on the thread
// count. Runs inline when work (n * cost) is small.
void parallel_for(std::size_t n, std::size_t cost_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body);

// c[M×N] += a[M×K] · b[K×N]   (all row-major)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b,
             Scalar* c);
// c[M×N] += a[M×K] · b[N×K]ᵀ
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b,
             Scalar* c);
// c[M×N] += a[K×M]ᵀ · b[K×N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b,
             Scalar* c);

}  // namespace dnl::kernels
