#pragma once

#include <string>
#include <vector>

#include "poq/tensor.hpp"

namespace poq {

template <typename T>
struct Param {
    std::string name;
    TensorPtr<T> tensor;
};

template <typename T>
void zero_grads(std::vector<Param<T>>& params) {
    for (auto& p : params) p.tensor->zero_grad();
}

namespace detail {
template <typename T>
const std::vector<T>& checked_grad(const Param<T>& p) {
    if (p.tensor->grad.size() != p.tensor->value.size())
        throw DataError("optimizer step: parameter '" + p.name + "' has no gradient");
    return p.tensor->grad;
}
} // namespace detail

/// SGD with classic momentum: v = μ·v + g, w -= lr·v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(T lr, T momentum) : lr_(lr), momentum_(momentum) {
        if (!(lr > T(0))) throw ConfigError("sgd: learning rate must be positive");
    }

    void step(std::vector<Param<T>>& params) {
        if (velocity_.size() != params.size()) velocity_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const auto& g = detail::checked_grad(p);
            auto& v = velocity_[i];
            if (v.size() != g.size()) v.assign(g.size(), T(0));
            T* w = p.tensor->value.data();
            for (std::size_t j = 0; j < g.size(); ++j) {
                v[j] = momentum_ * v[j] + g[j];
                w[j] -= lr_ * v[j];
            }
        }
        ++step_count_;
    }

    long step_count() const { return step_count_; }
    T lr() const { return lr_; }

private:
    T lr_;
    T momentum_;
    long step_count_ = 0;
    std::vector<std::vector<T>> velocity_;
};

/// Adam with bias correction; defaults β1=0.9, β2=0.999, ε=1e-8.
template <typename T>
class Adam {
public:
    explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(lr > T(0))) throw ConfigError("adam: learning rate must be positive");
    }

    void step(std::vector<Param<T>>& params) {
        if (m_.size() != params.size()) {
            m_.resize(params.size());
            v_.resize(params.size());
        }
        ++step_count_;
        double t = static_cast<double>(step_count_);
        T c1 = static_cast<T>(1.0 / (1.0 - std::pow(static_cast<double>(beta1_), t)));
        T c2 = static_cast<T>(1.0 / (1.0 - std::pow(static_cast<double>(beta2_), t)));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const auto& g = detail::checked_grad(p);
            auto& m = m_[i];
            auto& v = v_[i];
            if (m.size() != g.size()) {
                m.assign(g.size(), T(0));
                v.assign(g.size(), T(0));
            }
            T* w = p.tensor->value.data();
            for (std::size_t j = 0; j < g.size(); ++j) {
                m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
                T mhat = m[j] * c1;
                T vhat = v[j] * c2;
                w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    long step_count() const { return step_count_; }
    T lr() const { return lr_; }

private:
    T lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

} // namespace poq
