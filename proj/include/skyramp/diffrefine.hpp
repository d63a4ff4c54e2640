#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "skyramp/conv.hpp"
#include "skyramp/ops.hpp"
#include "skyramp/rng.hpp"
#include "skyramp/tensor.hpp"

namespace skyramp::diff {

using num::ParamStore;
using num::Tensor;

struct NoiseSchedule {
    int gamma = 1000;
    double s = 0.008;
    std::vector<double> alpha_bar; // length gamma+1, alpha_bar[0] == 1 exactly
    std::vector<double> beta;      // length gamma, beta[tau-1] for tau in 1..gamma
};

// Cosine schedule: alpha_bar(tau) = f(tau)/f(0) with
// f(tau) = cos^2(((tau/gamma + s)/(1 + s)) * pi/2); beta derived from the
// alpha_bar ratio and clipped to 0.999.
inline NoiseSchedule build_cosine_schedule(int gamma, double s = 0.008) {
    if (gamma < 1) throw std::invalid_argument("build_cosine_schedule: gamma must be >= 1");
    if (s <= 0.0) throw std::invalid_argument("build_cosine_schedule: s must be > 0");
    constexpr double kPi = 3.14159265358979323846;
    auto f = [&](double tau) {
        double c = std::cos((tau / gamma + s) / (1.0 + s) * kPi / 2.0);
        return c * c;
    };
    NoiseSchedule sched;
    sched.gamma = gamma;
    sched.s = s;
    sched.alpha_bar.resize(gamma + 1);
    sched.beta.resize(gamma);
    const double f0 = f(0.0);
    sched.alpha_bar[0] = 1.0;
    for (int tau = 1; tau <= gamma; ++tau) {
        sched.alpha_bar[tau] = f(double(tau)) / f0;
        double b = 1.0 - sched.alpha_bar[tau] / sched.alpha_bar[tau - 1];
        sched.beta[tau - 1] = std::min(b, 0.999);
    }
    return sched;
}

// x_tau = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int tau, const Tensor<T>& eps,
                   const NoiseSchedule& sched) {
    if (tau < 1 || tau > sched.gamma) throw std::invalid_argument("q_sample: tau out of range");
    if (x0.shape() != eps.shape()) throw std::invalid_argument("q_sample: shape mismatch");
    const double ab = sched.alpha_bar[tau];
    return num::mul_scalar(x0, T(std::sqrt(ab))) +
           num::mul_scalar(eps, T(std::sqrt(1.0 - ab)));
}

// softmax(Q K^T / sqrt(d)) V over the last two axes; batched.
template <typename T>
Tensor<T> standard_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.ndim() < 2 || k.ndim() < 2 || v.ndim() < 2)
        throw std::invalid_argument("standard_attention: need at least 2-d inputs");
    const std::size_t d = q.dim(q.ndim() - 1);
    if (k.dim(k.ndim() - 1) != d || k.dim(k.ndim() - 2) != v.dim(v.ndim() - 2))
        throw std::invalid_argument("standard_attention: dimension mismatch");
    std::vector<std::size_t> perm(k.ndim());
    for (std::size_t i = 0; i < k.ndim(); ++i) perm[i] = i;
    std::swap(perm[k.ndim() - 1], perm[k.ndim() - 2]);
    auto scores = num::mul_scalar(num::matmul(q, num::transpose(k, perm)),
                                  T(1.0 / std::sqrt(double(d))));
    return num::matmul(num::softmax(scores, scores.ndim() - 1), v);
}

// Kernel attention with phi(x) = ELU(x) + 1, computed as
// phi(Q) (phi(K)^T V) / (phi(Q) phi(K)^T 1) without the L x L matrix.
template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.ndim() < 2 || k.ndim() < 2 || v.ndim() < 2)
        throw std::invalid_argument("linear_attention: need at least 2-d inputs");
    const std::size_t d = q.dim(q.ndim() - 1);
    if (k.dim(k.ndim() - 1) != d || k.dim(k.ndim() - 2) != v.dim(v.ndim() - 2))
        throw std::invalid_argument("linear_attention: dimension mismatch");
    auto phi_q = num::add_scalar(num::elu(q), T(1));
    auto phi_k = num::add_scalar(num::elu(k), T(1));
    std::vector<std::size_t> perm(k.ndim());
    for (std::size_t i = 0; i < k.ndim(); ++i) perm[i] = i;
    std::swap(perm[k.ndim() - 1], perm[k.ndim() - 2]);
    auto kt = num::transpose(phi_k, perm);          // (..., d, L_k)
    auto kv = num::matmul(kt, v);                   // (..., d, d_v)
    auto ksum = num::reduce_sum(phi_k, {phi_k.ndim() - 2}, true); // (..., 1, d)
    auto den = num::matmul(phi_q, num::transpose(ksum, perm));    // (..., L_q, 1)
    return num::div(num::matmul(phi_q, kv), den);
}

// h = u + sigmoid(g_past) CrossAttn(u, F_past) + sigmoid(g_blurry) CrossAttn(u, F_blurry)
// over token tensors (..., L, d); gates are scalar tensors.
template <typename T>
Tensor<T> gated_fuse(const Tensor<T>& u, const Tensor<T>& f_past, const Tensor<T>& f_blurry,
                     const Tensor<T>& g_past, const Tensor<T>& g_blurry) {
    if (f_past.dim(f_past.ndim() - 1) != u.dim(u.ndim() - 1) ||
        f_blurry.dim(f_blurry.ndim() - 1) != u.dim(u.ndim() - 1))
        throw std::invalid_argument("gated_fuse: feature width mismatch");
    auto a = num::mul(num::sigmoid(g_past), linear_attention(u, f_past, f_past));
    auto b = num::mul(num::sigmoid(g_blurry), linear_attention(u, f_blurry, f_blurry));
    return u + a + b;
}

// Sinusoidal embedding of the diffusion step, shape (1, dim); constant.
template <typename T>
Tensor<T> step_embedding(int tau, std::size_t dim) {
    std::vector<T> e(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[i] = T(std::sin(tau * freq));
        e[half + i] = T(std::cos(tau * freq));
    }
    return Tensor<T>({1, dim}, std::move(e));
}

struct DenoiserConfig {
    std::size_t in_channels = 1;
    std::size_t base = 32;      // level-0 width; level 1 and middle use 2x
    std::size_t cond_base = 16; // conditional-stream level-0 width
    std::size_t temb_dim = 64;
};

// Two-branch spatiotemporal U-Net noise predictor. The backbone has two
// downsampling levels and a middle block, each built from residual 3D conv
// blocks with linear self- and cross-attention; the conditional branch
// encodes the past and blurry streams separately into multi-resolution
// features that are concatenated into the downsampling path (past features
// time-pooled and broadcast) and fused through gated cross-attention on the
// upsampling path.
template <typename T>
class DenoiserUNet {
public:
    struct CondFeatures {
        // spatial maps for concat injection: per level, per stream
        std::vector<Tensor<T>> past_map, blurry_map; // levels 0,1,middle
        // token views for cross-attention
        std::vector<Tensor<T>> past_tok, blurry_tok;
    };

    DenoiserUNet(const DenoiserConfig& cfg, ParamStore<T>& ps, Rng& rng,
                 std::string prefix = "denoiser.")
        : cfg_(cfg), ps_(&ps), prefix_(std::move(prefix)) {
        const std::size_t c0 = cfg_.base, c1 = 2 * cfg_.base, cm = 2 * cfg_.base;
        const std::size_t w0 = cfg_.cond_base, w1 = 2 * cfg_.cond_base, wm = 2 * cfg_.cond_base;
        ch_ = {c0, c1, cm};
        cw_ = {w0, w1, wm};

        for (const char* s : {"past", "blurry"}) {
            std::string cp = std::string("cond.") + s + ".";
            add_conv(cp + "stem", w0, cfg_.in_channels, 3, rng);
            add_bias(cp + "stem_b", w0);
            add_conv(cp + "down1", w1, w0, 3, rng);
            add_bias(cp + "down1_b", w1);
            add_conv(cp + "down2", wm, w1, 3, rng);
            add_bias(cp + "down2_b", wm);
        }

        add_conv("stem", c0, cfg_.in_channels, 3, rng);
        add_bias("stem_b", c0);

        add_res("down0.res1", c0 + 2 * w0, c0, rng);
        add_res("down0.res2", c0, c0, rng);
        add_attn("down0.self", c0, c0, rng);
        add_attn("down0.cross", c0, w0, rng);
        add_conv("down0.pool", c1, c0, 3, rng);
        add_bias("down0.pool_b", c1);

        add_res("down1.res1", c1 + 2 * w1, c1, rng);
        add_res("down1.res2", c1, c1, rng);
        add_attn("down1.self", c1, c1, rng);
        add_attn("down1.cross", c1, w1, rng);
        add_conv("down1.pool", cm, c1, 3, rng);
        add_bias("down1.pool_b", cm);

        add_res("mid.res1", cm + 2 * wm, cm, rng);
        add_attn("mid.self", cm, cm, rng);
        add_attn("mid.cross", cm, wm, rng);
        add_res("mid.res2", cm, cm, rng);

        add_conv("up1.in", c1, cm, 3, rng);
        add_bias("up1.in_b", c1);
        add_res("up1.res1", 2 * c1, c1, rng);
        add_res("up1.res2", c1, c1, rng);
        add_fuse("up1.fuse_past", c1, w1, rng);
        add_fuse("up1.fuse_blurry", c1, w1, rng);
        ps_->add(prefix_ + "up1.g_past", Tensor<T>({1}));
        ps_->add(prefix_ + "up1.g_blurry", Tensor<T>({1}));

        add_conv("up0.in", c0, c1, 3, rng);
        add_bias("up0.in_b", c0);
        add_res("up0.res1", 2 * c0, c0, rng);
        add_res("up0.res2", c0, c0, rng);
        add_fuse("up0.fuse_past", c0, w0, rng);
        add_fuse("up0.fuse_blurry", c0, w0, rng);
        ps_->add(prefix_ + "up0.g_past", Tensor<T>({1}));
        ps_->add(prefix_ + "up0.g_blurry", Tensor<T>({1}));

        // zero-init output projection: an untrained model predicts zero noise
        ps_->add(prefix_ + "out.w", Tensor<T>({cfg_.in_channels, c0, 3, 3, 3}));
        add_bias("out.b", cfg_.in_channels);
    }

    const DenoiserConfig& config() const { return cfg_; }

    // past (B, C, D_p, H, W), blurry (B, C, D, H, W); reusable across steps.
    CondFeatures encode_condition(const Tensor<T>& past, const Tensor<T>& blurry) const {
        if (past.ndim() != 5 || blurry.ndim() != 5)
            throw std::invalid_argument("encode_condition: expected 5-d streams");
        if (past.dim(3) != blurry.dim(3) || past.dim(4) != blurry.dim(4))
            throw std::invalid_argument("encode_condition: spatial mismatch between streams");
        CondFeatures f;
        encode_stream("cond.past.", past, f.past_map, f.past_tok, true, blurry.dim(2));
        encode_stream("cond.blurry.", blurry, f.blurry_map, f.blurry_tok, false, blurry.dim(2));
        return f;
    }

    // x (B, C, D, H, W) noisy clip; H, W divisible by 4.
    Tensor<T> forward(const Tensor<T>& x, int tau, const CondFeatures& cond) const {
        if (x.ndim() != 5) throw std::invalid_argument("denoiser: expected 5-d input");
        if (x.dim(3) % 4 != 0 || x.dim(4) % 4 != 0)
            throw std::invalid_argument("denoiser: spatial size must be divisible by 4");
        if (cond.blurry_map[0].dim(3) != x.dim(3) || cond.blurry_map[0].dim(4) != x.dim(4))
            throw std::invalid_argument("denoiser: condition/clip spatial mismatch");
        auto temb = step_embedding<T>(tau, cfg_.temb_dim);

        auto h = conv_b(x, "stem", "stem_b", 1);

        auto d0 = num::concat<T>({h, cond.blurry_map[0], cond.past_map[0]}, 1);
        d0 = res_block(d0, "down0.res1", temb);
        d0 = res_block(d0, "down0.res2", temb);
        d0 = self_attn(d0, "down0.self");
        d0 = cross_attn(d0, cond_tokens(cond, 0), "down0.cross");
        auto p1 = conv_b(d0, "down0.pool", "down0.pool_b", 2);

        auto d1 = num::concat<T>({p1, cond.blurry_map[1], cond.past_map[1]}, 1);
        d1 = res_block(d1, "down1.res1", temb);
        d1 = res_block(d1, "down1.res2", temb);
        d1 = self_attn(d1, "down1.self");
        d1 = cross_attn(d1, cond_tokens(cond, 1), "down1.cross");
        auto p2 = conv_b(d1, "down1.pool", "down1.pool_b", 2);

        auto m = num::concat<T>({p2, cond.blurry_map[2], cond.past_map[2]}, 1);
        m = res_block(m, "mid.res1", temb);
        m = self_attn(m, "mid.self");
        m = cross_attn(m, cond_tokens(cond, 2), "mid.cross");
        m = res_block(m, "mid.res2", temb);

        auto u1 = conv_b(num::upsample2x(m), "up1.in", "up1.in_b", 1);
        u1 = num::concat<T>({u1, d1}, 1);
        u1 = res_block(u1, "up1.res1", temb);
        u1 = res_block(u1, "up1.res2", temb);
        u1 = fuse(u1, cond, 1, "up1");

        auto u0 = conv_b(num::upsample2x(u1), "up0.in", "up0.in_b", 1);
        u0 = num::concat<T>({u0, d0}, 1);
        u0 = res_block(u0, "up0.res1", temb);
        u0 = res_block(u0, "up0.res2", temb);
        u0 = fuse(u0, cond, 0, "up0");

        return conv_b(num::relu(u0), "out.w", "out.b", 1);
    }

private:
    void encode_stream(const std::string& cp, const Tensor<T>& x, std::vector<Tensor<T>>& maps,
                       std::vector<Tensor<T>>& toks, bool pool_time, std::size_t target_d) const {
        auto f0 = num::relu(conv_b(x, cp + "stem", cp + "stem_b", 1));
        auto f1 = num::relu(conv_b(f0, cp + "down1", cp + "down1_b", 2));
        auto f2 = num::relu(conv_b(f1, cp + "down2", cp + "down2_b", 2));
        for (auto& f : {f0, f1, f2}) {
            toks.push_back(to_tokens(f));
            Tensor<T> map = f;
            if (pool_time) {
                map = num::reduce_mean(map, {2}, true);
                // broadcast the pooled step across the clip's time axis
                Tensor<T> ones({1, 1, target_d, 1, 1}, T(1));
                map = num::mul(map, ones);
            }
            maps.push_back(map);
        }
    }

    Tensor<T> cond_tokens(const CondFeatures& cond, std::size_t level) const {
        return num::concat<T>({cond.past_tok[level], cond.blurry_tok[level]}, 1);
    }

    static Tensor<T> to_tokens(const Tensor<T>& x) {
        const std::size_t B = x.dim(0), C = x.dim(1);
        const std::size_t L = x.dim(2) * x.dim(3) * x.dim(4);
        return num::transpose(num::reshape(x, {B, C, L}), {0, 2, 1});
    }

    static Tensor<T> from_tokens(const Tensor<T>& t, const num::Shape& like) {
        return num::reshape(num::transpose(t, {0, 2, 1}),
                            {like[0], like[1], like[2], like[3], like[4]});
    }

    Tensor<T> self_attn(const Tensor<T>& x, const std::string& name) const {
        auto t = to_tokens(x);
        auto q = num::matmul(t, p(name + ".wq"));
        auto k = num::matmul(t, p(name + ".wk"));
        auto v = num::matmul(t, p(name + ".wv"));
        auto o = num::matmul(linear_attention(q, k, v), p(name + ".wo"));
        return x + from_tokens(o, x.shape());
    }

    Tensor<T> cross_attn(const Tensor<T>& x, const Tensor<T>& cond_tok,
                         const std::string& name) const {
        auto t = to_tokens(x);
        auto q = num::matmul(t, p(name + ".wq"));
        auto k = num::matmul(cond_tok, p(name + ".wk"));
        auto v = num::matmul(cond_tok, p(name + ".wv"));
        auto o = num::matmul(linear_attention(q, k, v), p(name + ".wo"));
        return x + from_tokens(o, x.shape());
    }

    Tensor<T> fuse(const Tensor<T>& x, const CondFeatures& cond, std::size_t level,
                   const std::string& name) const {
        auto u = to_tokens(x);
        auto fp = num::matmul(cond.past_tok[level], p(name + ".fuse_past.wk"));
        auto fb = num::matmul(cond.blurry_tok[level], p(name + ".fuse_blurry.wk"));
        auto h = gated_fuse(u, fp, fb, p(name + ".g_past"), p(name + ".g_blurry"));
        return from_tokens(h, x.shape());
    }

    Tensor<T> res_block(const Tensor<T>& x, const std::string& name, const Tensor<T>& temb) const {
        auto y = conv_b(x, name + ".w1", name + ".b1", 1);
        auto e = num::matmul(temb, p(name + ".temb_w")) + p(name + ".temb_b");
        const std::size_t cout = e.dim(e.ndim() - 1);
        y = y + num::reshape(e, {1, cout, 1, 1, 1});
        y = conv_b(num::relu(y), name + ".w2", name + ".b2", 1);
        auto skip = x.dim(1) == cout ? x : conv_b(x, name + ".ws", name + ".bs", 1);
        return num::relu(y + skip);
    }

    Tensor<T> p(const std::string& name) const { return ps_->at(prefix_ + name); }

    Tensor<T> conv_b(const Tensor<T>& x, const std::string& w, const std::string& b,
                     std::size_t stride) const {
        const Tensor<T>& kw = ps_->at(prefix_ + w);
        return num::conv3d(x, kw, stride, kw.dim(2) / 2, kw.dim(3) / 2) + p(b);
    }

    void add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k,
                  Rng& rng) {
        const T std = T(std::sqrt(2.0 / double(in * k * k * k)));
        ps_->add(prefix_ + name, Tensor<T>::randn({out, in, k, k, k}, rng, std));
    }

    void add_bias(const std::string& name, std::size_t ch) {
        ps_->add(prefix_ + name, Tensor<T>({1, ch, 1, 1, 1}));
    }

    void add_res(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
        add_conv(name + ".w1", cout, cin, 3, rng);
        add_bias(name + ".b1", cout);
        add_conv(name + ".w2", cout, cout, 3, rng);
        add_bias(name + ".b2", cout);
        ps_->add(prefix_ + name + ".temb_w",
                 Tensor<T>::randn({cfg_.temb_dim, cout}, rng, T(0.02)));
        ps_->add(prefix_ + name + ".temb_b", Tensor<T>({cout}));
        if (cin != cout) {
            const T std = T(std::sqrt(2.0 / double(cin)));
            ps_->add(prefix_ + name + ".ws", Tensor<T>::randn({cout, cin, 1, 1, 1}, rng, std));
            add_bias(name + ".bs", cout);
        }
    }

    // attention projections: queries/outputs at width c, keys/values from
    // features of width w
    void add_attn(const std::string& name, std::size_t c, std::size_t w, Rng& rng) {
        const T sc = T(1.0 / std::sqrt(double(c)));
        const T sw = T(1.0 / std::sqrt(double(w)));
        ps_->add(prefix_ + name + ".wq", Tensor<T>::randn({c, c}, rng, sc));
        ps_->add(prefix_ + name + ".wk", Tensor<T>::randn({w, c}, rng, sw));
        ps_->add(prefix_ + name + ".wv", Tensor<T>::randn({w, c}, rng, sw));
        ps_->add(prefix_ + name + ".wo", Tensor<T>::randn({c, c}, rng, T(0.02)));
    }

    // gated fusion only needs the key/value projection of the cond stream
    void add_fuse(const std::string& name, std::size_t c, std::size_t w, Rng& rng) {
        const T sw = T(1.0 / std::sqrt(double(w)));
        ps_->add(prefix_ + name + ".wk", Tensor<T>::randn({w, c}, rng, sw));
    }

    DenoiserConfig cfg_;
    ParamStore<T>* ps_;
    std::string prefix_;
    std::vector<std::size_t> ch_, cw_;
};

// One noise-prediction training step: loss = mean (eps - eps_hat)^2.
template <typename T>
Tensor<T> diffusion_loss(const Tensor<T>& x0, const DenoiserUNet<T>& model,
                         const typename DenoiserUNet<T>::CondFeatures& cond,
                         const NoiseSchedule& sched, Rng& rng) {
    const int tau = 1 + int(rng.below(std::uint64_t(sched.gamma)));
    auto eps = Tensor<T>::randn(x0.shape(), rng);
    auto x_tau = q_sample(x0, tau, eps, sched);
    auto diff = eps - model.forward(x_tau, tau, cond);
    return num::mean_all(num::mul(diff, diff));
}

// Ancestral DDPM reverse process with posterior variance
// beta_tilde = beta * (1 - alpha_bar_{tau-1}) / (1 - alpha_bar_tau).
// mean_only disables the injected noise (used by the scalar-reference test).
template <typename T>
Tensor<T> sample(const DenoiserUNet<T>& model,
                 const typename DenoiserUNet<T>::CondFeatures& cond, const NoiseSchedule& sched,
                 const num::Shape& shape, Rng rng, bool mean_only = false, double lo = 0.0,
                 double hi = 1.0) {
    num::NoGradGuard ng;
    auto x = Tensor<T>::randn(shape, rng);
    for (int tau = sched.gamma; tau >= 1; --tau) {
        const double beta = sched.beta[tau - 1];
        const double alpha = 1.0 - beta;
        const double ab = sched.alpha_bar[tau];
        const double ab_prev = sched.alpha_bar[tau - 1];
        auto eps_hat = model.forward(x, tau, cond);
        // Recover the clean-frame estimate and clamp it to the data range
        // before forming the posterior mean. With few steps the terminal
        // betas are large and the equivalent eps-form update multiplies the
        // prediction error by 1/sqrt(alpha) (~30x at the first step), which
        // sends the chain off-manifold; bounding x0_hat keeps it stable.
        auto x0_hat = num::mul_scalar(
            x - num::mul_scalar(eps_hat, T(std::sqrt(1.0 - ab))), T(1.0 / std::sqrt(ab)));
        for (auto& v : x0_hat.data()) v = std::clamp(v, T(0), T(1));
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double cx = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
        auto mean = num::mul_scalar(x0_hat, T(c0)) + num::mul_scalar(x, T(cx));
        if (tau > 1 && !mean_only) {
            const double var = beta * (1.0 - ab_prev) / (1.0 - ab);
            x = mean + num::mul_scalar(Tensor<T>::randn(shape, rng), T(std::sqrt(var)));
        } else {
            x = mean;
        }
    }
    for (auto& v : x.data()) v = std::clamp(v, T(0), T(1));
    return x;
}

} // namespace skyramp::diff
