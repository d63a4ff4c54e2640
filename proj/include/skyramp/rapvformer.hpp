#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "skyramp/conv.hpp"
#include "skyramp/diffrefine.hpp"
#include "skyramp/ops.hpp"
#include "skyramp/rng.hpp"
#include "skyramp/tensor.hpp"

namespace skyramp::pv {

using num::ParamStore;
using num::Tensor;

enum class RampClass : int { Stable = 0, Up = 1, Down = 2 };

// Per-step 3-class ramp labels from one-step increments: up if the increment
// exceeds eps_label, down if below -eps_label, stable otherwise. The anchor is
// the last observed value before the horizon.
inline std::vector<int> ramp_labels(double anchor, const std::vector<double>& future,
                                    double eps_label) {
    if (eps_label <= 0.0) throw std::invalid_argument("ramp_labels: eps_label must be > 0");
    std::vector<int> out(future.size());
    double prev = anchor;
    for (std::size_t t = 0; t < future.size(); ++t) {
        double d = future[t] - prev;
        out[t] = d > eps_label ? int(RampClass::Up)
                               : (d < -eps_label ? int(RampClass::Down) : int(RampClass::Stable));
        prev = future[t];
    }
    return out;
}

// LayerNorm over the last axis with learned gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    const std::size_t last = x.ndim() - 1;
    auto mu = num::reduce_mean(x, {last}, true);
    auto centered = x - mu;
    auto var = num::reduce_mean(num::mul(centered, centered), {last}, true);
    auto inv = num::pow_t(num::add_scalar(var, eps), T(-0.5));
    return num::mul(centered, inv) * gain + bias;
}

// Sinusoidal positional encoding rows [start, start+len), shape (1, len, dim).
template <typename T>
Tensor<T> positional_encoding(std::size_t start, std::size_t len, std::size_t dim) {
    std::vector<T> e(len * dim);
    for (std::size_t p = 0; p < len; ++p)
        for (std::size_t i = 0; i < dim / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * double(i) / double(dim));
            e[p * dim + 2 * i] = T(std::sin(double(start + p) * freq));
            e[p * dim + 2 * i + 1] = T(std::cos(double(start + p) * freq));
        }
    return Tensor<T>({1, len, dim}, std::move(e));
}

struct PvLossConfig {
    double omega_p = 1.0;
    double omega_s = 0.5;
    double omega_r = 0.5;
    double alpha_slope = 2.0;
    double gamma = 2.0;
    double eps_label = 0.02; // fraction of capacity
};

struct RaPVConfig {
    std::size_t in_channels = 2; // frame + sun mask
    std::size_t image_size = 32;
    std::size_t hist_len = 16;
    std::size_t horizon = 16;
    std::size_t frame_dim = 128;
    std::size_t d_model = 256;
    std::size_t heads = 4;
    std::size_t ff_stack = 512;
    std::size_t ff_fusion = 1024;
    std::size_t pv_hidden = 64;
};

// Ramp-aware PV forecaster: convolutional frame encoder, MLP PV embedder,
// sinusoidal positions, separate historical/future transformer stacks,
// cross-attention fusion with future queries over historical keys, and PV
// regression + 3-class ramp heads.
template <typename T>
class RaPVFormer {
public:
    RaPVFormer(const RaPVConfig& cfg, ParamStore<T>& ps, Rng& rng, std::string prefix = "rapv.")
        : cfg_(cfg), ps_(&ps), prefix_(std::move(prefix)) {
        if (cfg_.d_model % cfg_.heads != 0)
            throw std::invalid_argument("rapvformer: d_model must divide by heads");
        const std::size_t widths[4] = {16, 32, 64, cfg_.frame_dim};
        std::size_t cin = cfg_.in_channels;
        for (int i = 0; i < 4; ++i) {
            add_conv("enc.w" + std::to_string(i), widths[i], cin, 3, rng);
            add_bias("enc.b" + std::to_string(i), widths[i]);
            cin = widths[i];
        }
        add_linear("pv.w1", 1, cfg_.pv_hidden, rng);
        add_linear("pv.w2", cfg_.pv_hidden, cfg_.frame_dim, rng);
        add_linear("proj.hist", cfg_.frame_dim * 2, cfg_.d_model, rng);
        add_linear("proj.fut", cfg_.frame_dim, cfg_.d_model, rng);
        for (const char* stack : {"hist", "fut"})
            for (int l = 0; l < 2; ++l)
                add_layer(std::string(stack) + std::to_string(l), cfg_.ff_stack, rng);
        for (int l = 0; l < 2; ++l) add_layer("fuse" + std::to_string(l), cfg_.ff_fusion, rng);
        add_linear("head.pv", cfg_.d_model, 1, rng);
        add_linear("head.ramp", cfg_.d_model, 3, rng);
    }

    const RaPVConfig& config() const { return cfg_; }

    // frames/masks (B, S, 1, H, W) -> per-step vectors (B, S, frame_dim)
    Tensor<T> encode_frames(const Tensor<T>& frames, const Tensor<T>& masks) const {
        if (frames.shape() != masks.shape())
            throw std::invalid_argument("encode_frames: frame/mask shape mismatch");
        const std::size_t B = frames.dim(0), S = frames.dim(1), H = frames.dim(3),
                          W = frames.dim(4);
        auto x = num::concat<T>({frames, masks}, 2);
        x = num::reshape(x, {B * S, cfg_.in_channels, H, W});
        for (int i = 0; i < 4; ++i)
            x = num::relu(conv_b(x, "enc.w" + std::to_string(i), "enc.b" + std::to_string(i), 2));
        x = num::reduce_mean(x, {2, 3}, false); // (B*S, frame_dim)
        return num::reshape(x, {B, S, cfg_.frame_dim});
    }

    // pv_hist (B, hist_len) capacity-normalized; returns token pair.
    std::pair<Tensor<T>, Tensor<T>> tokenize(const Tensor<T>& hist_frames,
                                             const Tensor<T>& future_frames,
                                             const Tensor<T>& masks,
                                             const Tensor<T>& pv_hist) const {
        const std::size_t B = hist_frames.dim(0);
        if (hist_frames.dim(1) != cfg_.hist_len || future_frames.dim(1) != cfg_.horizon)
            throw std::invalid_argument("tokenize: sequence length mismatch");
        if (masks.dim(1) != cfg_.hist_len + cfg_.horizon)
            throw std::invalid_argument("tokenize: need a mask per step");
        if (pv_hist.dim(0) != B || pv_hist.dim(1) != cfg_.hist_len)
            throw std::invalid_argument("tokenize: pv history length mismatch");
        const std::size_t H = hist_frames.dim(3), W = hist_frames.dim(4);

        auto hist_masks = num::slice(masks, {0, 0, 0, 0, 0}, {B, cfg_.hist_len, 1, H, W});
        auto fut_masks =
            num::slice(masks, {0, cfg_.hist_len, 0, 0, 0}, {B, cfg_.horizon, 1, H, W});
        auto hv = encode_frames(hist_frames, hist_masks);
        auto fv = encode_frames(future_frames, fut_masks);

        auto p = num::reshape(pv_hist, {B, cfg_.hist_len, 1});
        auto pe = num::relu(linear(p, "pv.w1"));
        pe = linear(pe, "pv.w2"); // (B, hist_len, frame_dim)

        auto ht = linear(num::concat<T>({hv, pe}, 2), "proj.hist");
        auto ft = linear(fv, "proj.fut");
        ht = ht + positional_encoding<T>(0, cfg_.hist_len, cfg_.d_model);
        ft = ft + positional_encoding<T>(cfg_.hist_len, cfg_.horizon, cfg_.d_model);
        return {ht, ft};
    }

    struct Forecast {
        Tensor<T> pv;     // (B, horizon), in kW
        Tensor<T> logits; // (B, horizon, 3)
    };

    Forecast forecast(const Tensor<T>& hist_tokens, const Tensor<T>& fut_tokens,
                      T capacity) const {
        auto h = hist_tokens;
        auto f = fut_tokens;
        for (int l = 0; l < 2; ++l) h = encoder_layer(h, h, "hist" + std::to_string(l));
        for (int l = 0; l < 2; ++l) f = encoder_layer(f, f, "fut" + std::to_string(l));
        for (int l = 0; l < 2; ++l) f = encoder_layer(f, h, "fuse" + std::to_string(l));
        const std::size_t B = f.dim(0);
        auto pv = num::mul_scalar(num::sigmoid(linear(f, "head.pv")), capacity);
        return {num::reshape(pv, {B, cfg_.horizon}), linear(f, "head.ramp")};
    }

    Forecast run(const Tensor<T>& hist_frames, const Tensor<T>& future_frames,
                 const Tensor<T>& masks, const Tensor<T>& pv_hist, T capacity) const {
        auto [ht, ft] = tokenize(hist_frames, future_frames, masks, pv_hist);
        return forecast(ht, ft, capacity);
    }

private:
    // Pre-norm transformer layer; kv == q gives self-attention, otherwise
    // cross-attention (the fusion layers).
    Tensor<T> encoder_layer(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                            const std::string& name) const {
        auto qn = layer_norm(q_in, p(name + ".ln1_g"), p(name + ".ln1_b"));
        auto kn = kv_in.impl() == q_in.impl()
                      ? qn
                      : layer_norm(kv_in, p(name + ".ln1kv_g"), p(name + ".ln1kv_b"));
        auto x = q_in + attention(qn, kn, name);
        auto xn = layer_norm(x, p(name + ".ln2_g"), p(name + ".ln2_b"));
        auto ff = linear(num::relu(linear(xn, name + ".ff1")), name + ".ff2");
        return x + ff;
    }

    Tensor<T> attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                        const std::string& name) const {
        const std::size_t B = q_in.dim(0), Lq = q_in.dim(1), Lk = kv_in.dim(1);
        const std::size_t hd = cfg_.d_model / cfg_.heads;
        auto split = [&](const Tensor<T>& t, std::size_t L) {
            return num::transpose(num::reshape(t, {B, L, cfg_.heads, hd}), {0, 2, 1, 3});
        };
        auto q = split(linear(q_in, name + ".wq"), Lq);
        auto k = split(linear(kv_in, name + ".wk"), Lk);
        auto v = split(linear(kv_in, name + ".wv"), Lk);
        auto o = diff::standard_attention(q, k, v); // (B, heads, Lq, hd)
        o = num::reshape(num::transpose(o, {0, 2, 1, 3}), {B, Lq, cfg_.d_model});
        return linear(o, name + ".wo");
    }

    Tensor<T> linear(const Tensor<T>& x, const std::string& name) const {
        return num::matmul(x, p(name + ".w")) + p(name + ".b");
    }

    Tensor<T> p(const std::string& name) const { return ps_->at(prefix_ + name); }

    Tensor<T> conv_b(const Tensor<T>& x, const std::string& w, const std::string& b,
                     std::size_t stride) const {
        const Tensor<T>& kw = ps_->at(prefix_ + w);
        return num::conv2d(x, kw, stride, kw.dim(2) / 2) + p(b);
    }

    void add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k,
                  Rng& rng) {
        const T std = T(std::sqrt(2.0 / double(in * k * k)));
        ps_->add(prefix_ + name, Tensor<T>::randn({out, in, k, k}, rng, std));
    }

    void add_bias(const std::string& name, std::size_t ch) {
        ps_->add(prefix_ + name, Tensor<T>({1, ch, 1, 1}));
    }

    void add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        const T std = T(std::sqrt(1.0 / double(in)));
        ps_->add(prefix_ + name + ".w", Tensor<T>::randn({in, out}, rng, std));
        ps_->add(prefix_ + name + ".b", Tensor<T>({out}));
    }

    void add_layer(const std::string& name, std::size_t ff, Rng& rng) {
        for (const char* wn : {".wq", ".wk", ".wv", ".wo"})
            add_linear(name + wn, cfg_.d_model, cfg_.d_model, rng);
        add_linear(name + ".ff1", cfg_.d_model, ff, rng);
        add_linear(name + ".ff2", ff, cfg_.d_model, rng);
        ps_->add(prefix_ + name + ".ln1_g", Tensor<T>({cfg_.d_model}, T(1)));
        ps_->add(prefix_ + name + ".ln1_b", Tensor<T>({cfg_.d_model}));
        ps_->add(prefix_ + name + ".ln1kv_g", Tensor<T>({cfg_.d_model}, T(1)));
        ps_->add(prefix_ + name + ".ln1kv_b", Tensor<T>({cfg_.d_model}));
        ps_->add(prefix_ + name + ".ln2_g", Tensor<T>({cfg_.d_model}, T(1)));
        ps_->add(prefix_ + name + ".ln2_b", Tensor<T>({cfg_.d_model}));
    }

    RaPVConfig cfg_;
    ParamStore<T>* ps_;
    std::string prefix_;
};

// Composite loss (MSE + adaptive slope + focal) on capacity-normalized power.
// pred/target (B, horizon); anchor (B) holds the last observed value; logits
// (B, horizon, 3); labels (B, horizon) ints.
template <typename T>
Tensor<T> loss_pv(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& anchor,
                  const Tensor<T>& logits, const std::vector<int>& labels,
                  const PvLossConfig& cfg) {
    if (pred.shape() != target.shape()) throw std::invalid_argument("loss_pv: shape mismatch");
    const std::size_t B = pred.dim(0), S = pred.dim(1);
    if (logits.dim(0) != B || logits.dim(1) != S || logits.dim(2) != 3)
        throw std::invalid_argument("loss_pv: logits shape mismatch");
    if (labels.size() != B * S) throw std::invalid_argument("loss_pv: label count mismatch");

    auto err = pred - target;
    auto l_mse = num::mean_all(num::mul(err, err));

    // one-step increments, both series anchored at the last observation
    auto prev_p = num::concat<T>({num::reshape(anchor, {B, 1}),
                                  num::slice(pred, {0, 0}, {B, S - 1})},
                                 1);
    auto prev_t = num::concat<T>({num::reshape(anchor, {B, 1}),
                                  num::slice(target, {0, 0}, {B, S - 1})},
                                 1);
    auto d_pred = pred - prev_p;
    auto d_true = target - prev_t;
    // adaptive weight from the true increment magnitude; not a gradient path
    Tensor<T> w({B, S});
    {
        num::NoGradGuard ng;
        for (std::size_t i = 0; i < B * S; ++i)
            w.data()[i] = T(1.0 + cfg.alpha_slope /
                                      (1.0 + std::exp(-std::abs(double(d_true.data()[i])))));
    }
    auto slope_err = d_pred - d_true;
    auto l_slope = num::mean_all(num::mul(w, num::mul(slope_err, slope_err)));

    Tensor<T> onehot({B, S, 3});
    for (std::size_t i = 0; i < B * S; ++i) {
        if (labels[i] < 0 || labels[i] > 2) throw std::invalid_argument("loss_pv: bad label");
        onehot.data()[i * 3 + labels[i]] = T(1);
    }
    auto probs = num::softmax(logits, 2);
    auto p_true = num::reduce_sum(num::mul(probs, onehot), {2}, false); // (B, S)
    // floor against log(0)
    auto p_safe = num::add_scalar(p_true, T(1e-12));
    auto nll = num::neg(num::log_t(p_safe));
    Tensor<T> l_focal;
    if (cfg.gamma == 0.0) {
        l_focal = num::mean_all(nll);
    } else {
        auto mod = num::pow_t(num::add_scalar(num::neg(p_true), T(1)), T(cfg.gamma));
        l_focal = num::mean_all(num::mul(mod, nll));
    }

    return num::mul_scalar(l_mse, T(cfg.omega_p)) + num::mul_scalar(l_slope, T(cfg.omega_s)) +
           num::mul_scalar(l_focal, T(cfg.omega_r));
}

// Visual-only ablation baseline: per-frame features from the same encoder
// architecture, a linear head per future step, no PV history and no
// transformer stacks.
template <typename T>
class VisualOnlyForecaster {
public:
    VisualOnlyForecaster(const RaPVConfig& cfg, ParamStore<T>& ps, Rng& rng,
                         std::string prefix = "visonly.")
        : cfg_(cfg), ps_(&ps), prefix_(std::move(prefix)) {
        const std::size_t widths[4] = {16, 32, 64, cfg_.frame_dim};
        std::size_t cin = cfg_.in_channels;
        for (int i = 0; i < 4; ++i) {
            const T std = T(std::sqrt(2.0 / double(cin * 9)));
            ps_->add(prefix_ + "enc.w" + std::to_string(i),
                     Tensor<T>::randn({widths[i], cin, 3, 3}, rng, std));
            ps_->add(prefix_ + "enc.b" + std::to_string(i), Tensor<T>({1, widths[i], 1, 1}));
            cin = widths[i];
        }
        const T std = T(std::sqrt(1.0 / double(cfg_.frame_dim)));
        ps_->add(prefix_ + "head.pv.w", Tensor<T>::randn({cfg_.frame_dim, 1}, rng, std));
        ps_->add(prefix_ + "head.pv.b", Tensor<T>({1}));
        ps_->add(prefix_ + "head.ramp.w", Tensor<T>::randn({cfg_.frame_dim, 3}, rng, std));
        ps_->add(prefix_ + "head.ramp.b", Tensor<T>({3}));
    }

    typename RaPVFormer<T>::Forecast run(const Tensor<T>& future_frames, const Tensor<T>& masks,
                                         T capacity) const {
        const std::size_t B = future_frames.dim(0), S = future_frames.dim(1),
                          H = future_frames.dim(3), W = future_frames.dim(4);
        auto fut_masks = num::slice(masks, {0, masks.dim(1) - S, 0, 0, 0}, {B, S, 1, H, W});
        auto x = num::concat<T>({future_frames, fut_masks}, 2);
        x = num::reshape(x, {B * S, cfg_.in_channels, H, W});
        for (int i = 0; i < 4; ++i) {
            const Tensor<T>& kw = ps_->at(prefix_ + "enc.w" + std::to_string(i));
            x = num::relu(num::conv2d(x, kw, 2, 1) +
                          ps_->at(prefix_ + "enc.b" + std::to_string(i)));
        }
        auto v = num::reshape(num::reduce_mean(x, {2, 3}, false), {B, S, cfg_.frame_dim});
        auto pv = num::mul_scalar(
            num::sigmoid(num::matmul(v, ps_->at(prefix_ + "head.pv.w")) +
                         ps_->at(prefix_ + "head.pv.b")),
            capacity);
        auto logits = num::matmul(v, ps_->at(prefix_ + "head.ramp.w")) +
                      ps_->at(prefix_ + "head.ramp.b");
        return {num::reshape(pv, {B, S}), logits};
    }

private:
    RaPVConfig cfg_;
    ParamStore<T>* ps_;
    std::string prefix_;
};

} // namespace skyramp::pv
