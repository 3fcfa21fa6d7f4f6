#pragma once

#include "evt/nn/params.hpp"

#include <cmath>
#include <functional>

namespace evt::nn {

// Adam with bias correction. Moment accumulators are keyed by parameter id
// and shaped like the parameters.
template <typename T>
class Adam {
public:
    explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr <= T(0)) throw ConfigError("Adam: learning rate must be > 0");
    }

    T learning_rate() const { return lr_; }
    long step_count() const { return step_; }

    // Applies one update from the accumulated gradients. `trainable` limits
    // the update to a parameter subset (nullptr = all). Gradients are left
    // untouched; callers zero them between steps.
    void step(ParamStore<T>& store,
              const std::function<bool(const std::string&)>& trainable = nullptr) {
        if (m_.empty()) {
            m_.resize(store.count());
            v_.resize(store.count());
            for (int i = 0; i < store.count(); ++i) {
                m_[i] = Tensor<T>(store.entry(i).value.shape);
                v_[i] = Tensor<T>(store.entry(i).value.shape);
            }
        }
        if (int(m_.size()) != store.count())
            throw ConfigError("Adam: optimizer state does not match parameter store");
        ++step_;
        const T bc1 = T(1) - std::pow(beta1_, T(step_));
        const T bc2 = T(1) - std::pow(beta2_, T(step_));
        for (int i = 0; i < store.count(); ++i) {
            auto& e = store.entry(i);
            if (trainable && !trainable(e.name)) continue;
            check_same_shape(e.value, m_[i], "Adam state");
            for (std::size_t k = 0; k < e.value.data.size(); ++k) {
                const T g = e.grad.data[k];
                T& m = m_[i].data[k];
                T& v = v_[i].data[k];
                m = beta1_ * m + (T(1) - beta1_) * g;
                v = beta2_ * v + (T(1) - beta2_) * g * g;
                const T mhat = m / bc1;
                const T vhat = v / bc2;
                e.value.data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    T lr_, beta1_, beta2_, eps_;
    long step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace evt::nn
