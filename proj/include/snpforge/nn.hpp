#ifndef SNPFORGE_NN_HPP
#define SNPFORGE_NN_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "snpforge/optim.hpp"
#include "snpforge/tensor.hpp"

namespace snpforge {

using Params = std::vector<NamedParam<float>>;

// Largest divisor of `channels` not exceeding `preferred`.
inline int norm_groups_for(int channels, int preferred) {
    for (int g = std::min(channels, preferred); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

struct Conv1dLayer {
    Tensorf w, b;
    int stride = 1, pad = 0;

    static Conv1dLayer make(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
                            bool zero_init = false) {
        Conv1dLayer l;
        const float std = zero_init ? 0.f : std::sqrt(2.f / static_cast<float>(in_ch * k));
        l.w = Tensorf::randn({out_ch, in_ch, k}, rng, std).set_requires_grad(true);
        l.b = Tensorf::zeros({out_ch}).set_requires_grad(true);
        l.stride = stride;
        l.pad = pad;
        return l;
    }
    Tensorf operator()(const Tensorf& x) const { return conv1d(x, w, b, stride, pad); }
    void collect(const std::string& prefix, Params& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct ConvT1dLayer {
    Tensorf w, b; // w [in, out, k]
    int stride = 2, pad = 1;

    static ConvT1dLayer make(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng) {
        ConvT1dLayer l;
        const float std = std::sqrt(2.f / static_cast<float>(in_ch * k));
        l.w = Tensorf::randn({in_ch, out_ch, k}, rng, std).set_requires_grad(true);
        l.b = Tensorf::zeros({out_ch}).set_requires_grad(true);
        l.stride = stride;
        l.pad = pad;
        return l;
    }
    Tensorf operator()(const Tensorf& x) const { return conv_transpose1d(x, w, b, stride, pad); }
    void collect(const std::string& prefix, Params& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct LinearLayer {
    Tensorf w, b;

    static LinearLayer make(int in_f, int out_f, Rng& rng, bool zero_init = false) {
        LinearLayer l;
        const float std = zero_init ? 0.f : std::sqrt(2.f / static_cast<float>(in_f));
        l.w = Tensorf::randn({out_f, in_f}, rng, std).set_requires_grad(true);
        l.b = Tensorf::zeros({out_f}).set_requires_grad(true);
        return l;
    }
    Tensorf operator()(const Tensorf& x) const { return linear(x, w, b); }
    void collect(const std::string& prefix, Params& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct GroupNormLayer {
    Tensorf gamma, beta;
    int groups = 1;

    static GroupNormLayer make(int channels, int preferred_groups) {
        GroupNormLayer l;
        l.gamma = Tensorf::full({channels}, 1.f).set_requires_grad(true);
        l.beta = Tensorf::zeros({channels}).set_requires_grad(true);
        l.groups = norm_groups_for(channels, preferred_groups);
        return l;
    }
    Tensorf operator()(const Tensorf& x) const { return group_norm(x, groups, gamma, beta); }
    void collect(const std::string& prefix, Params& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

struct InstanceNormLayer {
    Tensorf gamma, beta;

    static InstanceNormLayer make(int channels) {
        InstanceNormLayer l;
        l.gamma = Tensorf::full({channels}, 1.f).set_requires_grad(true);
        l.beta = Tensorf::zeros({channels}).set_requires_grad(true);
        return l;
    }
    Tensorf operator()(const Tensorf& x) const { return instance_norm(x, gamma, beta); }
    void collect(const std::string& prefix, Params& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

struct LayerNormLayer {
    Tensorf gamma, beta;

    static LayerNormLayer make(int dim) {
        LayerNormLayer l;
        l.gamma = Tensorf::full({dim}, 1.f).set_requires_grad(true);
        l.beta = Tensorf::zeros({dim}).set_requires_grad(true);
        return l;
    }
    Tensorf operator()(const Tensorf& x) const { return layer_norm(x, gamma, beta); }
    void collect(const std::string& prefix, Params& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Power-iteration spectral norm. One iteration per forward pass keeps the
// leading singular value estimate current while weights move.
struct SpectralState {
    std::vector<float> u, v;
    float sigma = 1.f;
};

// Runs `iters` power iterations on the [rows, cols] flattening of w and
// returns the sigma estimate.
float spectral_power_iteration(const Tensorf& w, SpectralState& state, int iters = 1);

// w / sigma_hat with sigma_hat treated as a constant of the step.
Tensorf spectral_normalize(const Tensorf& w, SpectralState& state, int iters = 1);

} // namespace snpforge

#endif
