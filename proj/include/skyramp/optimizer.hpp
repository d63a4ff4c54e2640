#pragma once

#include "skyramp/tensor.hpp"

namespace skyramp::num {

// Adaptive moment estimation, the de facto rule for all models here.
// Parameters with an empty gradient buffer are treated as zero-gradient
// (unreached by the loss); stepping before any backward call is an error.
template <typename T>
class Adam {
public:
    explicit Adam(T learning_rate, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr_ <= T(0)) throw std::invalid_argument("Adam: learning rate must be positive");
    }

    void step(ParamStore<T>& store) {
        auto& params = store.params();
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].value.size(), T(0));
                v_[i].assign(params[i].value.size(), T(0));
            }
        }
        bool any_grad = false;
        for (auto& p : params)
            if (!p.value.impl()->grad.empty()) any_grad = true;
        if (!any_grad) throw std::runtime_error("Adam::step: no gradients populated");

        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, T(t_));
        const T bc2 = T(1) - std::pow(beta2_, T(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& val = params[i].value.data();
            auto& g = params[i].value.impl()->grad;
            if (g.empty()) continue; // zero gradient: moments decay, value fixed up to m/v drift
            for (std::size_t j = 0; j < val.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g[j] * g[j];
                T mhat = m_[i][j] / bc1;
                T vhat = v_[i][j] / bc2;
                val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                if (!std::isfinite(double(val[j])))
                    throw std::runtime_error("Adam::step: non-finite parameter " + params[i].name);
            }
        }
        store.zero_grad();
    }

    std::uint64_t step_count() const { return t_; }
    T learning_rate() const { return lr_; }
    void set_learning_rate(T lr) { lr_ = lr; }

private:
    T lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm. Standard guard for recurrent models.
template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm) {
    double sq = 0.0;
    for (auto& p : store.params())
        for (T g : p.value.impl()->grad) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T scale = T(max_norm / norm);
        for (auto& p : store.params())
            for (T& g : p.value.impl()->grad) g *= scale;
    }
    return norm;
}

} // namespace skyramp::num
