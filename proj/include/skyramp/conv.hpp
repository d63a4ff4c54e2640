#pragma once

#include "skyramp/ops.hpp"

// Cross-correlation convolutions (no kernel flip), zero padding, im2col +
// gemm. The column buffer is recomputed during backward instead of being
// retained by the graph.

namespace skyramp::num {

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                                 std::size_t pad, const char* what) {
    std::size_t padded = in + 2 * pad;
    if (padded < k) throw std::invalid_argument(std::string(what) + ": kernel larger than input");
    std::size_t out = (padded - k) / stride + 1;
    if (out == 0) throw std::invalid_argument(std::string(what) + ": non-positive output size");
    return out;
}

namespace detail {

// col has layout (C*kh*kw, Ho*Wo)
template <typename T>
void im2col_2d(const T* in, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
               std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho,
               std::size_t Wo, T* col) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
                T* dst = col + ((c * kh + i) * kw + j) * Ho * Wo;
                for (std::size_t r = 0; r < Ho; ++r) {
                    std::ptrdiff_t ir = std::ptrdiff_t(r * stride + i) - std::ptrdiff_t(pad);
                    for (std::size_t q = 0; q < Wo; ++q) {
                        std::ptrdiff_t ic = std::ptrdiff_t(q * stride + j) - std::ptrdiff_t(pad);
                        dst[r * Wo + q] =
                            (ir >= 0 && ir < std::ptrdiff_t(H) && ic >= 0 &&
                             ic < std::ptrdiff_t(W))
                                ? in[(c * H + std::size_t(ir)) * W + std::size_t(ic)]
                                : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_2d(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
               std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho,
               std::size_t Wo, T* in_grad) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
                const T* src = col + ((c * kh + i) * kw + j) * Ho * Wo;
                for (std::size_t r = 0; r < Ho; ++r) {
                    std::ptrdiff_t ir = std::ptrdiff_t(r * stride + i) - std::ptrdiff_t(pad);
                    if (ir < 0 || ir >= std::ptrdiff_t(H)) continue;
                    for (std::size_t q = 0; q < Wo; ++q) {
                        std::ptrdiff_t ic = std::ptrdiff_t(q * stride + j) - std::ptrdiff_t(pad);
                        if (ic < 0 || ic >= std::ptrdiff_t(W)) continue;
                        in_grad[(c * H + std::size_t(ir)) * W + std::size_t(ic)] += src[r * Wo + q];
                    }
                }
            }
}

// col layout (C*kd*kh*kw, Do*Ho*Wo); time axis is never padded asymmetrically,
// pad_d applies like the spatial pads.
template <typename T>
void im2col_3d(const T* in, std::size_t C, std::size_t D, std::size_t H, std::size_t W,
               std::size_t kd, std::size_t kh, std::size_t kw, std::size_t stride_sp,
               std::size_t pad_d, std::size_t pad_sp, std::size_t Do, std::size_t Ho,
               std::size_t Wo, T* col) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < kd; ++t)
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                    T* dst = col + (((c * kd + t) * kh + i) * kw + j) * Do * Ho * Wo;
                    for (std::size_t z = 0; z < Do; ++z) {
                        std::ptrdiff_t iz = std::ptrdiff_t(z + t) - std::ptrdiff_t(pad_d);
                        for (std::size_t r = 0; r < Ho; ++r) {
                            std::ptrdiff_t ir =
                                std::ptrdiff_t(r * stride_sp + i) - std::ptrdiff_t(pad_sp);
                            for (std::size_t q = 0; q < Wo; ++q) {
                                std::ptrdiff_t ic =
                                    std::ptrdiff_t(q * stride_sp + j) - std::ptrdiff_t(pad_sp);
                                bool ok = iz >= 0 && iz < std::ptrdiff_t(D) && ir >= 0 &&
                                          ir < std::ptrdiff_t(H) && ic >= 0 &&
                                          ic < std::ptrdiff_t(W);
                                dst[(z * Ho + r) * Wo + q] =
                                    ok ? in[((c * D + std::size_t(iz)) * H + std::size_t(ir)) * W +
                                            std::size_t(ic)]
                                       : T(0);
                            }
                        }
                    }
                }
}

template <typename T>
void col2im_3d(const T* col, std::size_t C, std::size_t D, std::size_t H, std::size_t W,
               std::size_t kd, std::size_t kh, std::size_t kw, std::size_t stride_sp,
               std::size_t pad_d, std::size_t pad_sp, std::size_t Do, std::size_t Ho,
               std::size_t Wo, T* in_grad) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < kd; ++t)
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                    const T* src = col + (((c * kd + t) * kh + i) * kw + j) * Do * Ho * Wo;
                    for (std::size_t z = 0; z < Do; ++z) {
                        std::ptrdiff_t iz = std::ptrdiff_t(z + t) - std::ptrdiff_t(pad_d);
                        if (iz < 0 || iz >= std::ptrdiff_t(D)) continue;
                        for (std::size_t r = 0; r < Ho; ++r) {
                            std::ptrdiff_t ir =
                                std::ptrdiff_t(r * stride_sp + i) - std::ptrdiff_t(pad_sp);
                            if (ir < 0 || ir >= std::ptrdiff_t(H)) continue;
                            for (std::size_t q = 0; q < Wo; ++q) {
                                std::ptrdiff_t ic =
                                    std::ptrdiff_t(q * stride_sp + j) - std::ptrdiff_t(pad_sp);
                                if (ic < 0 || ic >= std::ptrdiff_t(W)) continue;
                                in_grad[((c * D + std::size_t(iz)) * H + std::size_t(ir)) * W +
                                        std::size_t(ic)] += src[(z * Ho + r) * Wo + q];
                            }
                        }
                    }
                }
}

} // namespace detail

// input (N, C, H, W), kernel (O, C, kh, kw)
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                 std::size_t pad = 0) {
    if (input.ndim() != 4 || kernel.ndim() != 4)
        throw std::invalid_argument("conv2d: expected 4-d input and kernel");
    std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    std::size_t O = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != C)
        throw std::invalid_argument("conv2d: channel mismatch: input " + shape_str(input.shape()) +
                                    " kernel " + shape_str(kernel.shape()));
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    std::size_t Ho = conv_out_size(H, kh, stride, pad, "conv2d");
    std::size_t Wo = conv_out_size(W, kw, stride, pad, "conv2d");

    const std::size_t ckk = C * kh * kw;
    const std::size_t hw = Ho * Wo;
    std::vector<T> out(N * O * hw, T(0));
    std::vector<T> col(ckk * hw);
    const T* pin = input.data().data();
    const T* pk = kernel.data().data();
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col_2d(pin + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        gemm_nn(pk, col.data(), out.data() + n * O * hw, O, ckk, hw);
    }

    auto ii = input.impl();
    auto ik = kernel.impl();
    Shape out_shape{N, O, Ho, Wo};
    return make_op<T>(out_shape, std::move(out), {ii, ik},
                      [ii, ik, N, C, H, W, O, kh, kw, stride, pad, Ho, Wo, ckk,
                       hw](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          const T* pin2 = ii->data.data();
                          const T* pk2 = ik->data.data();
                          std::vector<T>* gi = ii->requires_grad ? &bufs.of(ii.get()) : nullptr;
                          std::vector<T>* gk = ik->requires_grad ? &bufs.of(ik.get()) : nullptr;
                          std::vector<T> col(ckk * hw);
                          std::vector<T> dcol;
                          for (std::size_t n = 0; n < N; ++n) {
                              const T* gout = g.data() + n * O * hw;
                              if (gk) {
                                  detail::im2col_2d(pin2 + n * C * H * W, C, H, W, kh, kw, stride,
                                                    pad, Ho, Wo, col.data());
                                  gemm_nt(gout, col.data(), gk->data(), O, hw, ckk);
                              }
                              if (gi) {
                                  dcol.assign(ckk * hw, T(0));
                                  gemm_tn(pk2, gout, dcol.data(), O, ckk, hw);
                                  detail::col2im_2d(dcol.data(), C, H, W, kh, kw, stride, pad, Ho,
                                                    Wo, gi->data() + n * C * H * W);
                              }
                          }
                      });
}

// input (N, C, D, H, W), kernel (O, C, kd, kh, kw); spatial stride only, the
// time axis is stride 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                 std::size_t pad_d = 0, std::size_t pad_sp = 0) {
    if (input.ndim() != 5 || kernel.ndim() != 5)
        throw std::invalid_argument("conv3d: expected 5-d input and kernel");
    std::size_t N = input.dim(0), C = input.dim(1), D = input.dim(2), H = input.dim(3),
                W = input.dim(4);
    std::size_t O = kernel.dim(0), kd = kernel.dim(2), kh = kernel.dim(3), kw = kernel.dim(4);
    if (kernel.dim(1) != C)
        throw std::invalid_argument("conv3d: channel mismatch: input " + shape_str(input.shape()) +
                                    " kernel " + shape_str(kernel.shape()));
    if (stride == 0) throw std::invalid_argument("conv3d: stride must be >= 1");
    std::size_t Do = conv_out_size(D, kd, 1, pad_d, "conv3d");
    std::size_t Ho = conv_out_size(H, kh, stride, pad_sp, "conv3d");
    std::size_t Wo = conv_out_size(W, kw, stride, pad_sp, "conv3d");

    const std::size_t ckk = C * kd * kh * kw;
    const std::size_t dhw = Do * Ho * Wo;
    std::vector<T> out(N * O * dhw, T(0));
    std::vector<T> col(ckk * dhw);
    const T* pin = input.data().data();
    const T* pk = kernel.data().data();
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col_3d(pin + n * C * D * H * W, C, D, H, W, kd, kh, kw, stride, pad_d, pad_sp,
                          Do, Ho, Wo, col.data());
        gemm_nn(pk, col.data(), out.data() + n * O * dhw, O, ckk, dhw);
    }

    auto ii = input.impl();
    auto ik = kernel.impl();
    Shape out_shape{N, O, Do, Ho, Wo};
    return make_op<T>(out_shape, std::move(out), {ii, ik},
                      [ii, ik, N, C, D, H, W, O, kd, kh, kw, stride, pad_d, pad_sp, Do, Ho, Wo,
                       ckk, dhw](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          const T* pin2 = ii->data.data();
                          const T* pk2 = ik->data.data();
                          std::vector<T>* gi = ii->requires_grad ? &bufs.of(ii.get()) : nullptr;
                          std::vector<T>* gk = ik->requires_grad ? &bufs.of(ik.get()) : nullptr;
                          std::vector<T> col(ckk * dhw);
                          std::vector<T> dcol;
                          for (std::size_t n = 0; n < N; ++n) {
                              const T* gout = g.data() + n * O * dhw;
                              if (gk) {
                                  detail::im2col_3d(pin2 + n * C * D * H * W, C, D, H, W, kd, kh,
                                                    kw, stride, pad_d, pad_sp, Do, Ho, Wo,
                                                    col.data());
                                  gemm_nt(gout, col.data(), gk->data(), O, dhw, ckk);
                              }
                              if (gi) {
                                  dcol.assign(ckk * dhw, T(0));
                                  gemm_tn(pk2, gout, dcol.data(), O, ckk, dhw);
                                  detail::col2im_3d(dcol.data(), C, D, H, W, kd, kh, kw, stride,
                                                    pad_d, pad_sp, Do, Ho, Wo,
                                                    gi->data() + n * C * D * H * W);
                              }
                          }
                      });
}

} // namespace skyramp::num
