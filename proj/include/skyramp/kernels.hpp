#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops used by the tensor layer. Every kernel has a
// scalar reference implementation and an AVX2 variant; the active set is
// picked once at startup from CPUID and can be overridden with
// SKYRAMP_SIMD=scalar|avx2|auto.

namespace skyramp::kernels {

struct KernelTable {
    void (*add)(const float*, const float*, float*, std::size_t);
    void (*sub)(const float*, const float*, float*, std::size_t);
    void (*mul)(const float*, const float*, float*, std::size_t);
    void (*div)(const float*, const float*, float*, std::size_t);
    // y += a * x
    void (*axpy)(float, const float*, float*, std::size_t);
    // x *= a
    void (*scale)(float, float*, std::size_t);
    float (*dot)(const float*, const float*, std::size_t);
    float (*sum)(const float*, std::size_t);
    // c[i] += a[i] * b[i]
    void (*fma_acc)(const float*, const float*, float*, std::size_t);
};

extern const KernelTable scalar_table;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable avx2_table;
#endif

// Active table, resolved on first use.
const KernelTable& active();
std::string active_name();

// Row-major C[M,N] += A[M,K] * B[K,N], dispatched through axpy.
void gemm_acc(const float* a, const float* b, float* c,
              std::size_t m, std::size_t k, std::size_t n);

// Doubles stay scalar; the 64-bit path only serves gradient checking.
void gemm_acc(const double* a, const double* b, double* c,
              std::size_t m, std::size_t k, std::size_t n);

} // namespace skyramp::kernels
