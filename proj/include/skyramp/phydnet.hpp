#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "skyramp/conv.hpp"
#include "skyramp/ops.hpp"
#include "skyramp/rampmetrics.hpp"
#include "skyramp/rng.hpp"
#include "skyramp/tensor.hpp"

namespace skyramp::phy {

using num::ParamStore;
using num::Tensor;

// Derivative orders {(i,j) : 1 <= i+j <= q}, sorted by total order then by i
// descending: (1,0), (0,1), (2,0), (1,1), (0,2) for q = 2.
inline std::vector<std::pair<int, int>> derivative_orders(int q) {
    std::vector<std::pair<int, int>> out;
    for (int total = 1; total <= q; ++total)
        for (int i = total; i >= 0; --i) out.push_back({i, total - i});
    return out;
}

// Fixed moment-matched kernels: the kernel for (i,j) satisfies
// sum_{dx,dy} u(dx,dy) dx^a dy^b / (a! b!) = [a==i && b==j] for all a+b <= q,
// with x along columns and y along rows, coordinates centered on the kernel.
// Underdetermined systems take the minimum-norm solution. Returns (n,1,k,k).
template <typename T>
Tensor<T> build_derivative_basis(int q, int kernel_size) {
    if (q < 1) throw std::invalid_argument("build_derivative_basis: q must be >= 1");
    if (kernel_size % 2 == 0 || kernel_size < q + 1)
        throw std::invalid_argument("build_derivative_basis: kernel_size must be odd and >= q+1");

    std::vector<std::pair<int, int>> constraints; // all (a,b) with a+b <= q
    for (int total = 0; total <= q; ++total)
        for (int a = total; a >= 0; --a) constraints.push_back({a, total - a});
    const std::size_t m = constraints.size();
    const std::size_t n = std::size_t(kernel_size) * kernel_size;
    const int half = kernel_size / 2;

    auto factorial = [](int v) {
        double f = 1.0;
        for (int i = 2; i <= v; ++i) f *= i;
        return f;
    };

    // A: m x n moment matrix over kernel offsets
    std::vector<double> A(m * n);
    for (std::size_t ci = 0; ci < m; ++ci) {
        auto [a, b] = constraints[ci];
        const double norm = factorial(a) * factorial(b);
        for (int r = 0; r < kernel_size; ++r)
            for (int c = 0; c < kernel_size; ++c) {
                const double dx = c - half, dy = r - half;
                A[ci * n + std::size_t(r) * kernel_size + c] =
                    std::pow(dx, a) * std::pow(dy, b) / norm;
            }
    }

    // Gram matrix G = A A^T
    std::vector<double> G(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t t = 0; t < n; ++t) G[i * m + j] += A[i * n + t] * A[j * n + t];

    auto solve_gram = [&](std::vector<double> rhs) {
        std::vector<double> M = G;
        for (std::size_t col = 0; col < m; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < m; ++r)
                if (std::abs(M[r * m + col]) > std::abs(M[piv * m + col])) piv = r;
            if (std::abs(M[piv * m + col]) < 1e-10)
                throw std::invalid_argument(
                    "build_derivative_basis: moment system infeasible for this kernel size");
            if (piv != col) {
                for (std::size_t c2 = 0; c2 < m; ++c2) std::swap(M[piv * m + c2], M[col * m + c2]);
                std::swap(rhs[piv], rhs[col]);
            }
            for (std::size_t r = 0; r < m; ++r) {
                if (r == col) continue;
                const double f = M[r * m + col] / M[col * m + col];
                for (std::size_t c2 = col; c2 < m; ++c2) M[r * m + c2] -= f * M[col * m + c2];
                rhs[r] -= f * rhs[col];
            }
        }
        for (std::size_t i = 0; i < m; ++i) rhs[i] /= M[i * m + i];
        return rhs;
    };

    auto orders = derivative_orders(q);
    std::vector<T> data(orders.size() * n);
    for (std::size_t oi = 0; oi < orders.size(); ++oi) {
        std::vector<double> e(m, 0.0);
        for (std::size_t ci = 0; ci < m; ++ci)
            if (constraints[ci] == orders[oi]) e[ci] = 1.0;
        auto z = solve_gram(std::move(e));
        // minimum-norm kernel u = A^T z
        for (std::size_t t = 0; t < n; ++t) {
            double u = 0.0;
            for (std::size_t i = 0; i < m; ++i) u += A[i * n + t] * z[i];
            data[oi * n + t] = T(u);
        }
    }
    return Tensor<T>({orders.size(), 1, std::size_t(kernel_size), std::size_t(kernel_size)},
                     std::move(data));
}

struct PhyDNetConfig {
    std::size_t in_channels = 2; // frame + sun mask
    std::size_t out_channels = 1;
    std::size_t enc_mid = 16;
    std::size_t latent = 32;
    int q = 2;
    int kernel_size = 5;
};

// Physics-guided video predictor: shared encoder, a physics cell driven by
// fixed derivative kernels with a learned combination, a ConvLSTM residual
// branch, and a sigmoid decoder.
template <typename T>
class PhyDNet {
public:
    PhyDNet(const PhyDNetConfig& cfg, ParamStore<T>& ps, Rng& rng, std::string prefix = "phydnet.")
        : cfg_(cfg), ps_(&ps), prefix_(std::move(prefix)),
          basis_(build_derivative_basis<T>(cfg.q, cfg.kernel_size)) {
        nk_ = basis_.dim(0);
        const std::size_t L = cfg_.latent, M = cfg_.enc_mid;
        add_conv("enc.w1", M, cfg_.in_channels, 3, rng);
        add_bias("enc.b1", M);
        add_conv("enc.w2", L, M, 3, rng);
        add_bias("enc.b2", L);
        add_conv("enc.w3", L, L, 3, rng);
        add_bias("enc.b3", L);
        add_conv("dec.w1", M, L, 3, rng);
        add_bias("dec.b1", M);
        add_conv("dec.w2", M, M, 3, rng);
        add_bias("dec.b2", M);
        // small-gain head so initial outputs sit near sigmoid midrange
        add_conv("dec.w3", cfg_.out_channels, M, 3, rng, 0.1);
        add_bias("dec.b3", cfg_.out_channels);
        add_conv("phy.comb_w", L, L * nk_, 1, rng, 0.01);
        add_bias("phy.comb_b", L);
        // small-gain correction gate: K starts near zero, so the recurrence
        // begins as pure physics propagation instead of an unstable mixture
        add_conv("phy.gate_wh", L, L, 3, rng, 0.05);
        add_bias("phy.gate_b", L);
        add_conv("phy.gate_wu", L, L, 3, rng, 0.05);
        add_conv("lstm.wx", 4 * L, L, 3, rng);
        add_conv("lstm.wh", 4 * L, L, 3, rng);
        add_bias("lstm.b", 4 * L);
    }

    const PhyDNetConfig& config() const { return cfg_; }
    const Tensor<T>& basis() const { return basis_; }

    // (B, in_channels, H, W) -> (B, latent, H/4, W/4)
    Tensor<T> encode(const Tensor<T>& x) const {
        auto y = num::relu(conv_b(x, "enc.w1", "enc.b1", 2));
        y = num::relu(conv_b(y, "enc.w2", "enc.b2", 2));
        return conv_b(y, "enc.w3", "enc.b3", 1);
    }

    // (B, latent, h, w) -> (B, out_channels, 4h, 4w), values in [0,1]
    Tensor<T> decode(const Tensor<T>& h) const {
        auto y = num::relu(conv_b(num::upsample2x(h), "dec.w1", "dec.b1", 1));
        y = num::relu(conv_b(num::upsample2x(y), "dec.w2", "dec.b2", 1));
        return num::sigmoid(conv_b(y, "dec.w3", "dec.b3", 1));
    }

    // Phi(h) = learned 1x1 combination of the fixed derivative responses.
    Tensor<T> phi(const Tensor<T>& h) const {
        const std::size_t B = h.dim(0), C = h.dim(1), H = h.dim(2), W = h.dim(3);
        if (C != cfg_.latent) throw std::invalid_argument("phi: latent channel mismatch");
        auto flat = num::reshape(h, {B * C, 1, H, W});
        auto resp = num::conv2d(flat, basis_, 1, std::size_t(cfg_.kernel_size / 2));
        resp = num::reshape(resp, {B, C * nk_, H, W});
        return conv_b(resp, "phy.comb_w", "phy.comb_b", 1);
    }

    Tensor<T> phycell_predict(const Tensor<T>& h) const { return h + phi(h); }

    // Returns (h_next, K): K = tanh(Wh * h_tilde + Wu * enc + b),
    // h_next = (1 - K) .* h_tilde + K .* enc.
    std::pair<Tensor<T>, Tensor<T>> phycell_correct(const Tensor<T>& h_tilde,
                                                    const Tensor<T>& enc) const {
        if (h_tilde.shape() != enc.shape())
            throw std::invalid_argument("phycell_correct: shape mismatch");
        auto k = num::tanh_t(num::conv2d(h_tilde, p("phy.gate_wh"), 1, 1) +
                             conv_b(enc, "phy.gate_wu", "phy.gate_b", 1));
        auto one_minus = num::add_scalar(num::neg(k), T(1));
        return {one_minus * h_tilde + k * enc, k};
    }

    struct LstmState {
        Tensor<T> h, c;
    };

    LstmState convlstm_step(const LstmState& s, const Tensor<T>& x) const {
        if (s.h.shape() != x.shape()) throw std::invalid_argument("convlstm_step: shape mismatch");
        const std::size_t L = cfg_.latent;
        auto gates = num::conv2d(x, p("lstm.wx"), 1, 1) + conv_b(s.h, "lstm.wh", "lstm.b", 1);
        const std::size_t B = gates.dim(0), H = gates.dim(2), W = gates.dim(3);
        auto part = [&](std::size_t idx) {
            return num::slice(gates, {0, idx * L, 0, 0}, {B, L, H, W});
        };
        auto i = num::sigmoid(part(0));
        auto f = num::sigmoid(part(1));
        auto o = num::sigmoid(part(2));
        auto g = num::tanh_t(part(3));
        auto c = f * s.c + i * g;
        return {o * num::tanh_t(c), c};
    }

    // frames (B, S, out_channels, H, W); masks (B, S + horizon - 1, 1, H, W);
    // teacher (B, horizon, out_channels, H, W) during training. Returns
    // predictions (B, horizon, out_channels, H, W).
    Tensor<T> forecast(const Tensor<T>& frames, const Tensor<T>& masks, std::size_t horizon,
                       const Tensor<T>* teacher = nullptr, double tf_ratio = 0.0,
                       Rng* rng = nullptr) const {
        if (horizon < 1) throw std::invalid_argument("forecast: horizon must be >= 1");
        if (frames.ndim() != 5 || masks.ndim() != 5)
            throw std::invalid_argument("forecast: expected 5-d frames and masks");
        const std::size_t B = frames.dim(0), S = frames.dim(1), H = frames.dim(3),
                          W = frames.dim(4);
        if (masks.dim(1) < S + horizon - 1)
            throw std::invalid_argument("forecast: need a sun mask for every input step");
        if (teacher && teacher->dim(1) < horizon)
            throw std::invalid_argument("forecast: teacher frames shorter than horizon");
        if (H % 4 != 0 || W % 4 != 0)
            throw std::invalid_argument("forecast: spatial size must be divisible by 4");

        auto step_of = [&](const Tensor<T>& seq, std::size_t t) {
            const std::size_t C = seq.dim(2);
            return num::reshape(num::slice(seq, {0, t, 0, 0, 0}, {B, 1, C, H, W}), {B, C, H, W});
        };

        Tensor<T> h_phy({B, cfg_.latent, H / 4, W / 4});
        LstmState res{Tensor<T>({B, cfg_.latent, H / 4, W / 4}),
                      Tensor<T>({B, cfg_.latent, H / 4, W / 4})};

        auto consume = [&](const Tensor<T>& frame, std::size_t mask_t) {
            auto x = encode(num::concat<T>({frame, step_of(masks, mask_t)}, 1));
            h_phy = phycell_correct(phycell_predict(h_phy), x).first;
            res = convlstm_step(res, x);
        };

        for (std::size_t t = 0; t + 1 < S; ++t) consume(step_of(frames, t), t);

        Tensor<T> next_input = step_of(frames, S - 1);
        std::vector<Tensor<T>> preds;
        for (std::size_t s = 0; s < horizon; ++s) {
            consume(next_input, S - 1 + s);
            auto pred = decode(phycell_predict(h_phy) + res.h);
            preds.push_back(num::reshape(pred, {B, 1, cfg_.out_channels, H, W}));
            if (s + 1 < horizon) {
                const bool force = teacher && rng && rng->bernoulli(tf_ratio);
                next_input =
                    force ? step_of(*teacher, s)
                          : num::reshape(preds.back(), {B, cfg_.out_channels, H, W});
            }
        }
        return num::concat(preds, 1);
    }

private:
    Tensor<T> p(const std::string& name) const { return ps_->at(prefix_ + name); }

    Tensor<T> conv_b(const Tensor<T>& x, const std::string& w, const std::string& b,
                     std::size_t stride) const {
        const Tensor<T>& kw = ps_->at(prefix_ + w);
        return num::conv2d(x, kw, stride, kw.dim(2) / 2) + p(b);
    }

    void add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k,
                  Rng& rng, double gain = 1.0) {
        const T std = T(gain * std::sqrt(2.0 / double(in * k * k)));
        ps_->add(prefix_ + name, Tensor<T>::randn({out, in, k, k}, rng, std));
    }

    void add_bias(const std::string& name, std::size_t ch) {
        ps_->add(prefix_ + name, Tensor<T>({1, ch, 1, 1}));
    }

    PhyDNetConfig cfg_;
    ParamStore<T>* ps_;
    std::string prefix_;
    Tensor<T> basis_;
    std::size_t nk_ = 0;
};

// alpha * (1 - SSIM) + (1 - alpha) * mean |I - I_hat|, differentiable.
template <typename T>
Tensor<T> frame_loss(const Tensor<T>& target, const Tensor<T>& pred, T alpha) {
    if (target.shape() != pred.shape()) throw std::invalid_argument("frame_loss: shape mismatch");
    if (alpha < T(0) || alpha > T(1)) throw std::invalid_argument("frame_loss: alpha in [0,1]");
    auto l1 = num::mean_all(num::abs_t(target - pred));
    if (alpha == T(0)) return l1;
    auto dssim = num::add_scalar(num::neg(metrics::ssim(target, pred)), T(1));
    return num::mul_scalar(dssim, alpha) + num::mul_scalar(l1, T(1) - alpha);
}

} // namespace skyramp::phy
