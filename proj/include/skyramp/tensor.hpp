#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "skyramp/rng.hpp"

namespace skyramp::num {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + ")";
}

template <typename T>
struct TensorImpl;

// Per-backward-pass gradient buffers, kept outside the impls so concurrent
// backward passes over shared parameters never race. Leaf accumulation into
// Parameter::grad happens once, at the end, on the calling thread.
template <typename T>
class GradBuffers {
public:
    std::vector<T>& of(const TensorImpl<T>* node) {
        auto it = bufs_.find(node);
        if (it == bufs_.end())
            it = bufs_.emplace(node, std::vector<T>(node->data.size(), T(0))).first;
        return it->second;
    }
    bool has(const TensorImpl<T>* node) const { return bufs_.count(node) != 0; }
    std::unordered_map<const TensorImpl<T>*, std::vector<T>> bufs_;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // leaf accumulator, lazily sized
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    // Receives this node's gradient and scatters into parent buffers.
    std::function<void(const std::vector<T>&, GradBuffers<T>&)> backward_fn;
};

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename T>
class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(numel(impl_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
        if (numel(shape) != data.size())
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1)) {
        Tensor t(shape);
        for (auto& v : t.data()) v = T(stddev * rng.normal());
        return t;
    }

    static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi) {
        Tensor t(shape);
        for (auto& v : t.data()) v = T(rng.uniform(double(lo), double(hi)));
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->data.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t ndim() const { return impl_->shape.size(); }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }
    T item() const {
        if (impl_->data.size() != 1) throw std::logic_error("item() on non-scalar tensor");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    std::vector<T>& grad() {
        if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }

    // Same values, fresh leaf, no history.
    Tensor detach() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

    bool all_finite() const {
        for (T v : impl_->data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Builds an op-output tensor; grad tracking propagates from parents and can
// be suppressed globally with NoGradGuard (parents are then dropped so the
// graph is never retained).
template <typename T, typename BackwardFn>
Tensor<T> make_op(Shape shape, std::vector<T> data,
                  std::vector<std::shared_ptr<TensorImpl<T>>> parents, BackwardFn&& fn) {
    Tensor<T> out(std::move(shape), std::move(data));
    bool track = false;
    if (g_grad_enabled)
        for (auto& p : parents)
            if (p->requires_grad) track = true;
    if (track) {
        out.impl()->requires_grad = true;
        out.impl()->parents = std::move(parents);
        out.impl()->backward_fn = std::forward<BackwardFn>(fn);
    }
    return out;
}

template <typename T>
std::vector<TensorImpl<T>*> topo_order(TensorImpl<T>* root) {
    std::vector<TensorImpl<T>*> order;
    std::unordered_map<TensorImpl<T>*, int> state; // 0 new, 1 open, 2 done
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack{{root, 0}};
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0) state[node] = 1;
        if (idx < node->parents.size()) {
            TensorImpl<T>* p = node->parents[idx++].get();
            int s = state.count(p) ? state[p] : 0;
            if (s == 1) throw std::logic_error("autodiff graph contains a cycle");
            if (s == 0 && p->requires_grad) stack.push_back({p, 0});
        } else {
            state[node] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order; // parents before children
}

// Reverse-mode sweep from a scalar loss; returns the buffers so callers can
// inspect gradients of non-leaf tensors (used by the finite-difference
// harness) or merge several per-sample passes deterministically.
template <typename T>
GradBuffers<T> compute_gradients(const Tensor<T>& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!std::isfinite(double(loss.item()))) throw std::runtime_error("backward: non-finite loss");
    GradBuffers<T> bufs;
    if (!loss.impl()->requires_grad) return bufs;
    auto order = topo_order(loss.impl().get());
    bufs.of(loss.impl().get())[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (!node->backward_fn || !bufs.has(node)) continue;
        node->backward_fn(bufs.of(node), bufs);
    }
    return bufs;
}

// Accumulates into the leaf .grad fields; repeated calls add up until
// zero_grad (or an optimizer step) clears them.
template <typename T>
void backward(const Tensor<T>& loss) {
    GradBuffers<T> bufs = compute_gradients(loss);
    for (auto& [node, g] : bufs.bufs_) {
        auto* n = const_cast<TensorImpl<T>*>(node);
        if (n->backward_fn || !n->requires_grad) continue;
        if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), T(0));
        for (std::size_t i = 0; i < g.size(); ++i) {
            n->grad[i] += g[i];
            if (!std::isfinite(double(n->grad[i])))
                throw std::runtime_error("backward: non-finite gradient");
        }
    }
}

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

// Ordered, name-unique parameter registry shared by all models.
template <typename T>
class ParamStore {
public:
    Tensor<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        init.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back({name, init});
        return init;
    }

    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return params_[it->second].value;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    std::size_t count() const { return params_.size(); }

private:
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace skyramp::num
