#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "skyramp/kernels.hpp"
#include "skyramp/tensor.hpp"

namespace skyramp::num {

// ---- typed wrappers over the float kernel table -----------------------------

template <typename T>
inline void kaxpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
template <>
inline void kaxpy<float>(float a, const float* x, float* y, std::size_t n) {
    kernels::active().axpy(a, x, y, n);
}

template <typename T>
inline T kdot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}
template <>
inline float kdot<float>(const float* a, const float* b, std::size_t n) {
    return kernels::active().dot(a, b, n);
}

template <typename T>
inline T ksum(const T* a, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}
template <>
inline float ksum<float>(const float* a, std::size_t n) {
    return kernels::active().sum(a, n);
}

template <typename T>
inline void kfma_acc(const T* a, const T* b, T* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] += a[i] * b[i];
}
template <>
inline void kfma_acc<float>(const float* a, const float* b, float* c, std::size_t n) {
    kernels::active().fma_acc(a, b, c, n);
}

// C(M,N) += A(M,K) * B(K,N), row-major
template <typename T>
inline void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    kernels::gemm_acc(a, b, c, m, k, n);
}

// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
inline void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += kdot(a + i * k, b + j * k, k);
}

// C(K,N) += A(M,K)^T * B(M,N)
template <typename T>
inline void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av != T(0)) kaxpy(av, b + i * n, c + p * n, n);
        }
}

// ---- broadcasting helpers ----------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " +
                                        shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides, zeroed on broadcast axes, right-aligned to `out`.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        std::size_t axis = in.size() - 1 - i;
        std::size_t out_axis = out.size() - 1 - i;
        st[out_axis] = (in[axis] == 1) ? 0 : stride;
        stride *= in[axis];
    }
    return st;
}

// Visits every position of `out`, yielding (out_index, a_offset, b_offset).
template <typename Fn>
inline void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                               const std::vector<std::size_t>& sb, Fn&& fn) {
    std::size_t total = numel(out);
    std::size_t nd = out.size();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t offa = 0, offb = 0;
    for (std::size_t i = 0; i < total; ++i) {
        fn(i, offa, offb);
        for (std::size_t d = nd; d-- > 0;) {
            if (++idx[d] < out[d]) {
                offa += sa[d];
                offb += sb[d];
                break;
            }
            idx[d] = 0;
            offa -= sa[d] * (out[d] - 1);
            offb -= sb[d] * (out[d] - 1);
        }
    }
}

// ---- elementwise binary ops ----------------------------------------------------

enum class BinKind { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind) {
    const bool same = a.shape() == b.shape();
    Shape out_shape = same ? a.shape() : broadcast_shape(a.shape(), b.shape());
    std::vector<T> out(numel(out_shape));
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);

    const T* pa = a.data().data();
    const T* pb = b.data().data();
    if (same) {
        if constexpr (std::is_same_v<T, float>) {
            const auto& kt = kernels::active();
            switch (kind) {
                case BinKind::Add: kt.add(pa, pb, out.data(), out.size()); break;
                case BinKind::Sub: kt.sub(pa, pb, out.data(), out.size()); break;
                case BinKind::Mul: kt.mul(pa, pb, out.data(), out.size()); break;
                case BinKind::Div: kt.div(pa, pb, out.data(), out.size()); break;
            }
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) {
                switch (kind) {
                    case BinKind::Add: out[i] = pa[i] + pb[i]; break;
                    case BinKind::Sub: out[i] = pa[i] - pb[i]; break;
                    case BinKind::Mul: out[i] = pa[i] * pb[i]; break;
                    case BinKind::Div: out[i] = pa[i] / pb[i]; break;
                }
            }
        }
    } else {
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
            switch (kind) {
                case BinKind::Add: out[i] = pa[oa] + pb[ob]; break;
                case BinKind::Sub: out[i] = pa[oa] - pb[ob]; break;
                case BinKind::Mul: out[i] = pa[oa] * pb[ob]; break;
                case BinKind::Div: out[i] = pa[oa] / pb[ob]; break;
            }
        });
    }
    if (kind == BinKind::Div)
        for (T v : out)
            if (!std::isfinite(double(v))) throw std::runtime_error("div: non-finite result");

    auto ia = a.impl();
    auto ib = b.impl();
    return make_op<T>(
        out_shape, std::move(out), {ia, ib},
        [ia, ib, out_shape, sa, sb, same, kind](const std::vector<T>& g, GradBuffers<T>& bufs) {
            const T* pa2 = ia->data.data();
            const T* pb2 = ib->data.data();
            std::vector<T>* ga = ia->requires_grad ? &bufs.of(ia.get()) : nullptr;
            std::vector<T>* gb = ib->requires_grad ? &bufs.of(ib.get()) : nullptr;
            if (same && kind == BinKind::Add) {
                if (ga) kaxpy(T(1), g.data(), ga->data(), g.size());
                if (gb) kaxpy(T(1), g.data(), gb->data(), g.size());
                return;
            }
            if (same && kind == BinKind::Sub) {
                if (ga) kaxpy(T(1), g.data(), ga->data(), g.size());
                if (gb) kaxpy(T(-1), g.data(), gb->data(), g.size());
                return;
            }
            if (same && kind == BinKind::Mul) {
                if (ga) kfma_acc(g.data(), pb2, ga->data(), g.size());
                if (gb) kfma_acc(g.data(), pa2, gb->data(), g.size());
                return;
            }
            for_each_broadcast(out_shape, sa, sb,
                               [&](std::size_t i, std::size_t oa, std::size_t ob) {
                                   switch (kind) {
                                       case BinKind::Add:
                                           if (ga) (*ga)[oa] += g[i];
                                           if (gb) (*gb)[ob] += g[i];
                                           break;
                                       case BinKind::Sub:
                                           if (ga) (*ga)[oa] += g[i];
                                           if (gb) (*gb)[ob] -= g[i];
                                           break;
                                       case BinKind::Mul:
                                           if (ga) (*ga)[oa] += g[i] * pb2[ob];
                                           if (gb) (*gb)[ob] += g[i] * pa2[oa];
                                           break;
                                       case BinKind::Div:
                                           if (ga) (*ga)[oa] += g[i] / pb2[ob];
                                           if (gb)
                                               (*gb)[ob] -= g[i] * pa2[oa] / (pb2[ob] * pb2[ob]);
                                           break;
                                   }
                               });
        });
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Add); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Sub); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Mul); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Div); }

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---- elementwise unary ops ----------------------------------------------------

// dfdx receives (x, y) so cheap derivatives can reuse the forward value.
template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& x, F&& f, DF&& dfdx) {
    std::vector<T> out(x.size());
    const T* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(px[i]);
    auto ix = x.impl();
    return make_op<T>(x.shape(), std::move(out), {ix},
                      [ix, dfdx](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          const T* px2 = ix->data.data();
                          for (std::size_t i = 0; i < g.size(); ++i)
                              gx[i] += g[i] * dfdx(px2[i], T(0));
                      });
}

template <typename T>
Tensor<T> tanh_t(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::tanh(v); },
        [](T v, T) {
            T t = std::tanh(v);
            return T(1) - t * t;
        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T v, T) {
            T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) - s);
        });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : std::expm1(v); },
        [](T v, T) { return v > T(0) ? T(1) : std::exp(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::exp(v); }, [](T v, T) { return std::exp(v); });
}

template <typename T>
Tensor<T> log_t(const Tensor<T>& x) {
    Tensor<T> y = unary_op(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
    if (!y.all_finite()) throw std::runtime_error("log: non-finite result");
    return y;
}

template <typename T>
Tensor<T> pow_t(const Tensor<T>& x, T p) {
    return unary_op(
        x, [p](T v) { return std::pow(v, p); },
        [p](T v, T) { return p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return unary_op(
        x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    return unary_op(
        x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v >= T(0) ? T(1) : T(-1); });
}

// ---- matmul ------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw std::invalid_argument("matmul: operands must have >= 2 dims");
    std::size_t M = a.dim(a.ndim() - 2), K = a.dim(a.ndim() - 1);
    std::size_t Kb = b.dim(b.ndim() - 2), N = b.dim(b.ndim() - 1);
    if (K != Kb)
        throw std::invalid_argument("matmul: inner dims disagree: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    Shape batch = broadcast_shape(abatch, bbatch);
    auto sa = broadcast_strides(abatch, batch);
    auto sb = broadcast_strides(bbatch, batch);
    // convert element strides over batch axes into matrix strides
    for (auto& s : sa) s *= M * K;
    for (auto& s : sb) s *= K * N;
    std::size_t nb = numel(batch);

    Shape out_shape = batch;
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<T> out(nb * M * N, T(0));

    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for_each_broadcast(batch, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
        gemm_nn(pa + oa, pb + ob, out.data() + i * M * N, M, K, N);
    });

    auto ia = a.impl();
    auto ib = b.impl();
    return make_op<T>(out_shape, std::move(out), {ia, ib},
                      [ia, ib, batch, sa, sb, M, K, N](const std::vector<T>& g,
                                                       GradBuffers<T>& bufs) {
                          const T* pa2 = ia->data.data();
                          const T* pb2 = ib->data.data();
                          std::vector<T>* ga = ia->requires_grad ? &bufs.of(ia.get()) : nullptr;
                          std::vector<T>* gb = ib->requires_grad ? &bufs.of(ib.get()) : nullptr;
                          for_each_broadcast(
                              batch, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                                  const T* gc = g.data() + i * M * N;
                                  if (ga) gemm_nt(gc, pb2 + ob, ga->data() + oa, M, N, K);
                                  if (gb) gemm_tn(pa2 + oa, gc, gb->data() + ob, M, K, N);
                              });
                      });
}

// ---- reductions ----------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::vector<std::size_t> axes, bool keepdims = false) {
    std::sort(axes.begin(), axes.end());
    for (std::size_t ax : axes)
        if (ax >= x.ndim()) throw std::invalid_argument("reduce: axis out of range");
    for (std::size_t i = 1; i < axes.size(); ++i)
        if (axes[i] == axes[i - 1]) throw std::invalid_argument("reduce: duplicate axis");

    Shape in_shape = x.shape();
    Shape out_shape;
    std::vector<bool> reduced(in_shape.size(), false);
    for (std::size_t ax : axes) reduced[ax] = true;
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
        if (!reduced[d]) out_shape.push_back(in_shape[d]);
        else if (keepdims) out_shape.push_back(1);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    // strides from input position into output position
    Shape kept = in_shape;
    for (std::size_t d = 0; d < kept.size(); ++d)
        if (reduced[d]) kept[d] = 1;
    std::vector<std::size_t> out_stride(in_shape.size());
    std::size_t s = 1;
    for (std::size_t d = in_shape.size(); d-- > 0;) {
        out_stride[d] = (kept[d] == 1) ? 0 : s;
        s *= kept[d];
    }

    std::vector<T> out(numel(out_shape), T(0));
    const T* px = x.data().data();
    std::vector<std::size_t> zero(in_shape.size(), 0);
    for_each_broadcast(in_shape, out_stride, zero,
                       [&](std::size_t i, std::size_t oo, std::size_t) { out[oo] += px[i]; });

    auto ix = x.impl();
    return make_op<T>(out_shape, std::move(out), {ix},
                      [ix, in_shape, out_stride, zero](const std::vector<T>& g,
                                                       GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          for_each_broadcast(in_shape, out_stride, zero,
                                             [&](std::size_t i, std::size_t oo, std::size_t) {
                                                 gx[i] += g[oo];
                                             });
                      });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<std::size_t> axes, bool keepdims = false) {
    std::size_t n = 1;
    for (std::size_t ax : axes) n *= x.dim(ax);
    return mul_scalar(reduce_sum(x, std::move(axes), keepdims), T(1) / T(n));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T s = ksum(x.data().data(), x.size());
    auto ix = x.impl();
    return make_op<T>(Shape{1}, std::vector<T>{s}, {ix},
                      [ix](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          for (auto& v : gx) v += g[0];
                      });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return mul_scalar(sum_all(x), T(1) / T(x.size()));
}

// ---- softmax -------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.ndim()) throw std::invalid_argument("softmax: axis out of range");
    std::size_t n = x.dim(axis);
    if (n == 0) throw std::invalid_argument("softmax: empty axis");
    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.dim(d);
    for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);

    std::vector<T> out(x.size());
    const T* px = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = px[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
            T denom = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                T e = std::exp(px[base + j * inner] - mx);
                out[base + j * inner] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= denom;
        }

    auto ix = x.impl();
    std::shared_ptr<std::vector<T>> saved = std::make_shared<std::vector<T>>(out);
    return make_op<T>(x.shape(), std::move(out), {ix},
                      [ix, saved, n, inner, outer](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          const std::vector<T>& y = *saved;
                          for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t in = 0; in < inner; ++in) {
                                  const std::size_t base = o * n * inner + in;
                                  T dotv = T(0);
                                  for (std::size_t j = 0; j < n; ++j)
                                      dotv += g[base + j * inner] * y[base + j * inner];
                                  for (std::size_t j = 0; j < n; ++j)
                                      gx[base + j * inner] +=
                                          y[base + j * inner] * (g[base + j * inner] - dotv);
                              }
                      });
}

// ---- shape ops -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) +
                                    " -> " + shape_str(new_shape));
    auto ix = x.impl();
    return make_op<T>(std::move(new_shape), std::vector<T>(x.data()), {ix},
                      [ix](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          kaxpy(T(1), g.data(), bufs.of(ix.get()).data(), g.size());
                      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::vector<std::size_t> perm) {
    if (perm.size() != x.ndim()) throw std::invalid_argument("transpose: bad permutation size");
    Shape out_shape(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) out_shape[d] = x.dim(perm[d]);

    std::vector<std::size_t> in_stride(x.ndim());
    std::size_t s = 1;
    for (std::size_t d = x.ndim(); d-- > 0;) {
        in_stride[d] = s;
        s *= x.dim(d);
    }
    std::vector<std::size_t> src_stride(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) src_stride[d] = in_stride[perm[d]];

    std::vector<T> out(x.size());
    const T* px = x.data().data();
    std::vector<std::size_t> zero(out_shape.size(), 0);
    for_each_broadcast(out_shape, src_stride, zero,
                       [&](std::size_t i, std::size_t oi, std::size_t) { out[i] = px[oi]; });

    auto ix = x.impl();
    return make_op<T>(out_shape, std::move(out), {ix},
                      [ix, out_shape, src_stride, zero](const std::vector<T>& g,
                                                        GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          for_each_broadcast(out_shape, src_stride, zero,
                                             [&](std::size_t i, std::size_t oi, std::size_t) {
                                                 gx[oi] += g[i];
                                             });
                      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    Shape out_shape = xs[0].shape();
    if (axis >= out_shape.size()) throw std::invalid_argument("concat: axis out of range");
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i].ndim() != out_shape.size())
            throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t d = 0; d < out_shape.size(); ++d)
            if (d != axis && xs[i].dim(d) != out_shape[d])
                throw std::invalid_argument("concat: off-axis shape mismatch");
        out_shape[axis] += xs[i].dim(axis);
    }

    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];

    std::vector<T> out(numel(out_shape));
    std::size_t total_axis = out_shape[axis];
    std::size_t axis_off = 0;
    std::vector<std::size_t> offsets;
    for (const auto& x : xs) {
        offsets.push_back(axis_off);
        std::size_t na = x.dim(axis);
        const T* px = x.data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total_axis + axis_off) * inner,
                        px + o * na * inner, na * inner * sizeof(T));
        axis_off += na;
    }

    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::vector<std::size_t> sizes;
    for (const auto& x : xs) {
        parents.push_back(x.impl());
        sizes.push_back(x.dim(axis));
    }
    auto parents_copy = parents;
    return make_op<T>(out_shape, std::move(out), std::move(parents),
                      [parents_copy, offsets, sizes, inner, outer, total_axis](
                          const std::vector<T>& g, GradBuffers<T>& bufs) {
                          for (std::size_t k = 0; k < parents_copy.size(); ++k) {
                              auto& p = parents_copy[k];
                              if (!p->requires_grad) continue;
                              auto& gp = bufs.of(p.get());
                              for (std::size_t o = 0; o < outer; ++o)
                                  kaxpy(T(1),
                                        g.data() + (o * total_axis + offsets[k]) * inner,
                                        gp.data() + o * sizes[k] * inner, sizes[k] * inner);
                          }
                      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, const std::vector<std::size_t>& starts,
                const std::vector<std::size_t>& sizes) {
    if (starts.size() != x.ndim() || sizes.size() != x.ndim())
        throw std::invalid_argument("slice: starts/sizes rank mismatch");
    Shape out_shape(sizes.begin(), sizes.end());
    for (std::size_t d = 0; d < x.ndim(); ++d)
        if (starts[d] + sizes[d] > x.dim(d)) throw std::invalid_argument("slice: out of bounds");

    std::vector<std::size_t> in_stride(x.ndim());
    std::size_t s = 1;
    for (std::size_t d = x.ndim(); d-- > 0;) {
        in_stride[d] = s;
        s *= x.dim(d);
    }
    std::size_t base = 0;
    for (std::size_t d = 0; d < x.ndim(); ++d) base += starts[d] * in_stride[d];

    std::vector<T> out(numel(out_shape));
    const T* px = x.data().data();
    std::vector<std::size_t> zero(out_shape.size(), 0);
    for_each_broadcast(out_shape, in_stride, zero,
                       [&](std::size_t i, std::size_t oi, std::size_t) { out[i] = px[base + oi]; });

    auto ix = x.impl();
    return make_op<T>(out_shape, std::move(out), {ix},
                      [ix, out_shape, in_stride, base, zero](const std::vector<T>& g,
                                                             GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          for_each_broadcast(out_shape, in_stride, zero,
                                             [&](std::size_t i, std::size_t oi, std::size_t) {
                                                 gx[base + oi] += g[i];
                                             });
                      });
}

// Nearest-neighbour 2x upsampling of the trailing two axes.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    if (x.ndim() < 2) throw std::invalid_argument("upsample2x: need >= 2 dims");
    std::size_t H = x.dim(x.ndim() - 2), W = x.dim(x.ndim() - 1);
    std::size_t planes = x.size() / (H * W);
    Shape out_shape = x.shape();
    out_shape[x.ndim() - 2] = 2 * H;
    out_shape[x.ndim() - 1] = 2 * W;

    std::vector<T> out(x.size() * 4);
    const T* px = x.data().data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
                T v = px[(p * H + r) * W + c];
                std::size_t b = (p * 2 * H + 2 * r) * 2 * W + 2 * c;
                out[b] = v;
                out[b + 1] = v;
                out[b + 2 * W] = v;
                out[b + 2 * W + 1] = v;
            }

    auto ix = x.impl();
    return make_op<T>(out_shape, std::move(out), {ix},
                      [ix, planes, H, W](const std::vector<T>& g, GradBuffers<T>& bufs) {
                          auto& gx = bufs.of(ix.get());
                          for (std::size_t p = 0; p < planes; ++p)
                              for (std::size_t r = 0; r < H; ++r)
                                  for (std::size_t c = 0; c < W; ++c) {
                                      std::size_t b = (p * 2 * H + 2 * r) * 2 * W + 2 * c;
                                      gx[(p * H + r) * W + c] +=
                                          g[b] + g[b + 1] + g[b + 2 * W] + g[b + 2 * W + 1];
                                  }
                      });
}

} // namespace skyramp::num
