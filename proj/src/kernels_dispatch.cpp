#include "skyramp/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace skyramp::kernels {
namespace {

struct Selection {
    const KernelTable* table;
    const char* name;
};

Selection select() {
    const char* env = std::getenv("SKYRAMP_SIMD");
#if defined(__x86_64__) || defined(_M_X64)
    bool want_avx2 = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    if (env) {
        if (std::strcmp(env, "scalar") == 0) want_avx2 = false;
        else if (std::strcmp(env, "avx2") == 0) want_avx2 = true;
        // "auto" or anything else keeps the CPUID result
    }
    if (want_avx2) return {&avx2_table, "avx2"};
#else
    (void)env;
#endif
    return {&scalar_table, "scalar"};
}

const Selection& selection() {
    static const Selection s = select();
    return s;
}

} // namespace

const KernelTable& active() { return *selection().table; }

std::string active_name() { return selection().name; }

void gemm_acc(const float* a, const float* b, float* c,
              std::size_t m, std::size_t k, std::size_t n) {
    const KernelTable& t = active();
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av != 0.0f) t.axpy(av, b + p * n, crow, n);
        }
    }
}

void gemm_acc(const double* a, const double* b, double* c,
              std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[p * n + j];
        }
    }
}

} // namespace skyramp::kernels
