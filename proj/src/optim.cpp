#include "snpforge/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace snpforge {

template <typename T>
Adam<T>::Adam(std::vector<NamedParam<T>> params, T lr, T beta1, T beta2, T eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.value.data().size(), T(0));
        v_.emplace_back(p.value.data().size(), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    ++step_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        if (!p.value.has_grad()) continue; // no gradient flowed this step
        auto& data = p.value.data();
        const auto& g = p.value.impl()->grad;
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < data.size(); ++i) {
            const T gi = g[i];
            if (std::isnan(gi))
                throw std::runtime_error("adam: NaN gradient in parameter '" + p.name + "'");
            m[i] = beta1_ * m[i] + (T(1) - beta1_) * gi;
            v[i] = beta2_ * v[i] + (T(1) - beta2_) * gi * gi;
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
Ema<T>::Ema(const std::vector<NamedParam<T>>& params, T decay, bool warmup)
    : decay_(decay), warmup_(warmup) {
    if (!(decay >= T(0) && decay <= T(1)))
        throw std::invalid_argument("ema: decay must lie in [0,1]");
    shadows_.reserve(params.size());
    for (const auto& p : params) shadows_.push_back(p.value.data());
}

template <typename T>
void Ema<T>::update(const std::vector<NamedParam<T>>& params) {
    if (params.size() != shadows_.size())
        throw std::invalid_argument("ema: parameter count changed");
    ++updates_;
    T d = decay_;
    if (warmup_) {
        const T ramp = static_cast<T>(1 + updates_) / static_cast<T>(10 + updates_);
        d = std::min(decay_, ramp);
    }
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& src = params[pi].value.data();
        auto& sh = shadows_[pi];
        if (src.size() != sh.size())
            throw std::invalid_argument("ema: shape mismatch for parameter '" + params[pi].name +
                                        "'");
        for (size_t i = 0; i < sh.size(); ++i)
            sh[i] = d * sh[i] + (T(1) - d) * src[i];
    }
}

template <typename T>
void Ema<T>::copy_to(std::vector<NamedParam<T>>& params) const {
    if (params.size() != shadows_.size())
        throw std::invalid_argument("ema: parameter count changed");
    for (size_t pi = 0; pi < params.size(); ++pi) params[pi].value.data() = shadows_[pi];
}

template class Adam<float>;
template class Adam<double>;
template class Ema<float>;
template class Ema<double>;

} // namespace snpforge
