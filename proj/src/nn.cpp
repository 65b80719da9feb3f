#include "snpforge/nn.hpp"

#include <stdexcept>

namespace snpforge {

float spectral_power_iteration(const Tensorf& w, SpectralState& state, int iters) {
    if (!w.defined() || w.ndim() < 2)
        throw std::invalid_argument("spectral_norm: weight must have rank >= 2");
    const auto rows = static_cast<size_t>(w.dim(0));
    const auto cols = static_cast<size_t>(w.numel() / w.dim(0));
    const auto& wd = w.data();
    if (state.u.size() != rows || state.v.size() != cols) {
        Rng rng(derive_seed(0x5eC7, "spectral_u") ^ (rows * 1315423911ull + cols));
        state.u.resize(rows);
        state.v.assign(cols, 0.f);
        for (auto& x : state.u) x = static_cast<float>(rng.normal());
    }
    auto normalize = [](std::vector<float>& x) {
        double n = 0;
        for (const auto v : x) n += static_cast<double>(v) * v;
        n = std::sqrt(n) + 1e-12;
        for (auto& v : x) v = static_cast<float>(v / n);
    };
    for (int it = 0; it < iters; ++it) {
        // v <- normalize(W^T u)
        for (size_t c = 0; c < cols; ++c) state.v[c] = 0.f;
        for (size_t r = 0; r < rows; ++r) {
            const float ur = state.u[r];
            const auto* wr = wd.data() + r * cols;
            for (size_t c = 0; c < cols; ++c) state.v[c] += ur * wr[c];
        }
        normalize(state.v);
        // u <- normalize(W v)
        for (size_t r = 0; r < rows; ++r) {
            const auto* wr = wd.data() + r * cols;
            double acc = 0;
            for (size_t c = 0; c < cols; ++c) acc += static_cast<double>(wr[c]) * state.v[c];
            state.u[r] = static_cast<float>(acc);
        }
        normalize(state.u);
    }
    double sigma = 0;
    for (size_t r = 0; r < rows; ++r) {
        const auto* wr = wd.data() + r * cols;
        double acc = 0;
        for (size_t c = 0; c < cols; ++c) acc += static_cast<double>(wr[c]) * state.v[c];
        sigma += static_cast<double>(state.u[r]) * acc;
    }
    state.sigma = static_cast<float>(std::abs(sigma));
    return state.sigma;
}

Tensorf spectral_normalize(const Tensorf& w, SpectralState& state, int iters) {
    const float sigma = spectral_power_iteration(w, state, iters);
    return scale(w, 1.f / (sigma + 1e-12f));
}

} // namespace snpforge
