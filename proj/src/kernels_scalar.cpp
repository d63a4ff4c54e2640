#include "skyramp/kernels.hpp"

namespace skyramp::kernels {
namespace {

void add_scalar(const float* a, const float* b, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(const float* a, const float* b, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(const float* a, const float* b, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div_scalar(const float* a, const float* b, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void axpy_scalar(float a, const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(float a, float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

float dot_scalar(const float* a, const float* b, std::size_t n) {
    // 4 partial sums, matching the lane reduction of the AVX2 variant closely
    // enough for the equivalence tolerance.
    float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    float s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

float sum_scalar(const float* a, std::size_t n) {
    float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    float s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i];
    return s;
}

void fma_acc_scalar(const float* a, const float* b, float* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] += a[i] * b[i];
}

} // namespace

const KernelTable scalar_table = {
    add_scalar, sub_scalar, mul_scalar,    div_scalar, axpy_scalar,
    scale_scalar, dot_scalar, sum_scalar, fma_acc_scalar,
};

} // namespace skyramp::kernels
