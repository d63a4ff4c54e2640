#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "skyramp/kernels.hpp"
#include "skyramp/rng.hpp"

using namespace skyramp;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform(-2.0, 2.0));
    return v;
}

} // namespace

#if defined(__x86_64__) || defined(_M_X64)

// Every SIMD kernel must agree with its scalar reference. Sizes cover the
// vector body, the tail, and sub-width inputs.
TEST_CASE("avx2 kernels match scalar reference") {
    if (!__builtin_cpu_supports("avx2")) return;
    Rng rng(42);
    const auto& s = kernels::scalar_table;
    const auto& v = kernels::avx2_table;
    for (std::size_t n : {1u, 3u, 7u, 8u, 9u, 16u, 17u, 31u, 64u, 257u, 1000u}) {
        auto a = random_vec(n, rng);
        auto b = random_vec(n, rng);
        for (auto& x : b)
            if (std::abs(x) < 0.1f) x = 0.5f; // keep div well-conditioned

        std::vector<float> o1(n), o2(n);
        s.add(a.data(), b.data(), o1.data(), n);
        v.add(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);
        s.sub(a.data(), b.data(), o1.data(), n);
        v.sub(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);
        s.mul(a.data(), b.data(), o1.data(), n);
        v.mul(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);
        s.div(a.data(), b.data(), o1.data(), n);
        v.div(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);

        o1 = b;
        o2 = b;
        s.axpy(1.25f, a.data(), o1.data(), n);
        v.axpy(1.25f, a.data(), o2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-6));

        o1 = a;
        o2 = a;
        s.scale(0.75f, o1.data(), n);
        v.scale(0.75f, o2.data(), n);
        CHECK(o1 == o2);

        o1 = b;
        o2 = b;
        s.fma_acc(a.data(), b.data(), o1.data(), n);
        v.fma_acc(a.data(), b.data(), o2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-6));

        // reductions reassociate; compare against a double accumulation
        double dref = 0.0, sref = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dref += double(a[i]) * double(b[i]);
            sref += double(a[i]);
        }
        CHECK(double(v.dot(a.data(), b.data(), n)) == doctest::Approx(dref).epsilon(1e-4));
        CHECK(double(s.dot(a.data(), b.data(), n)) == doctest::Approx(dref).epsilon(1e-4));
        CHECK(double(v.sum(a.data(), n)) == doctest::Approx(sref).epsilon(1e-4));
        CHECK(double(s.sum(a.data(), n)) == doctest::Approx(sref).epsilon(1e-4));
    }
}

#endif

TEST_CASE("gemm_acc matches a double-precision triple loop") {
    Rng rng(7);
    const std::size_t m = 9, k = 13, n = 21;
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    std::vector<float> c(m * n, 0.f);
    kernels::gemm_acc(a.data(), b.data(), c.data(), m, k, n);

    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double ref = 0.0;
            for (std::size_t p = 0; p < k; ++p) ref += double(a[i * k + p]) * double(b[p * n + j]);
            CHECK(double(c[i * n + j]) == doctest::Approx(ref).epsilon(1e-4));
        }
}

TEST_CASE("dispatch reports a valid kernel set") {
    auto name = kernels::active_name();
    CHECK((name == "avx2" || name == "scalar"));
}
