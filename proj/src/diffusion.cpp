#include "snpforge/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace snpforge {

// ---- schedule ---------------------------------------------------------------

NoiseSchedule NoiseSchedule::build(int t_steps, double beta_start, double beta_end) {
    if (t_steps < 2) throw std::invalid_argument("noise schedule: need at least 2 timesteps");
    if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1))
        throw std::invalid_argument("noise schedule: endpoints must satisfy 0 < start < end < 1");
    NoiseSchedule s;
    s.t_steps = t_steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(static_cast<size_t>(t_steps));
    s.alpha.resize(static_cast<size_t>(t_steps));
    s.alpha_bar.resize(static_cast<size_t>(t_steps));
    const double rs = std::sqrt(beta_start);
    const double re = std::sqrt(beta_end);
    double prod = 1.0;
    for (int t = 0; t < t_steps; ++t) {
        const double r = rs + (re - rs) * static_cast<double>(t) / static_cast<double>(t_steps - 1);
        const double b = r * r;
        s.beta[static_cast<size_t>(t)] = b;
        s.alpha[static_cast<size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

double NoiseSchedule::sigma(int t) const {
    const double ab = alpha_bar[static_cast<size_t>(t)];
    return std::sqrt((1.0 - ab) / ab);
}

Tensorf q_sample(const Tensorf& z0, const std::vector<int>& t, const Tensorf& eps,
                 const NoiseSchedule& schedule) {
    if (z0.shape() != eps.shape())
        throw std::invalid_argument("q_sample: z0/eps shape mismatch");
    const int64_t b = z0.dim(0);
    if (static_cast<int64_t>(t.size()) != b)
        throw std::invalid_argument("q_sample: need one timestep per sample");
    Tensorf a = Tensorf::zeros({b, 1, 1});
    Tensorf s = Tensorf::zeros({b, 1, 1});
    for (int64_t i = 0; i < b; ++i) {
        const int ti = t[static_cast<size_t>(i)];
        if (ti < 0 || ti >= schedule.t_steps)
            throw std::invalid_argument("q_sample: timestep out of range");
        const double ab = schedule.alpha_bar[static_cast<size_t>(ti)];
        a.data()[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(ab));
        s.data()[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(1.0 - ab));
    }
    return add(mul(a, z0), mul(s, eps));
}

// ---- config presets -------------------------------------------------------------

LdmConfig LdmConfig::desk() {
    return {};
}

LdmConfig LdmConfig::paper() {
    LdmConfig c;
    c.model_channels = 64;
    c.embed_dim = 128;
    c.norm_groups = 32;
    c.lr = 1e-4;
    c.batch = 1024;
    c.epochs = 500;
    c.ema_decay = 0.9999;
    return c;
}

// ---- blocks ----------------------------------------------------------------------

ResBlockT ResBlockT::make(int in_ch, int out_ch, int temb_dim, int norm_groups, Rng& rng) {
    ResBlockT b;
    b.n1 = GroupNormLayer::make(in_ch, norm_groups);
    b.c1 = Conv1dLayer::make(in_ch, out_ch, 3, 1, 1, rng);
    b.emb = LinearLayer::make(temb_dim, out_ch, rng);
    b.n2 = GroupNormLayer::make(out_ch, norm_groups);
    b.c2 = Conv1dLayer::make(out_ch, out_ch, 3, 1, 1, rng, /*zero_init=*/true);
    if (in_ch != out_ch) b.skip = Conv1dLayer::make(in_ch, out_ch, 1, 1, 0, rng);
    return b;
}

Tensorf ResBlockT::forward(const Tensorf& x, const Tensorf& temb) const {
    auto h = c1(silu(n1(x)));
    auto e = emb(silu(temb)); // [B, out_ch]
    h = add(h, reshape(e, {e.dim(0), e.dim(1), 1}));
    h = c2(silu(n2(h)));
    return add(h, skip ? (*skip)(x) : x);
}

void ResBlockT::collect(const std::string& prefix, Params& out) {
    n1.collect(prefix + ".n1", out);
    c1.collect(prefix + ".c1", out);
    emb.collect(prefix + ".emb", out);
    n2.collect(prefix + ".n2", out);
    c2.collect(prefix + ".c2", out);
    if (skip) skip->collect(prefix + ".skip", out);
}

CrossAttention CrossAttention::make(int inner, int ctx_dim, int head_dim, Rng& rng) {
    CrossAttention a;
    a.head_dim = head_dim;
    a.heads = std::max(1, inner / head_dim);
    if (inner % a.heads != 0)
        throw std::invalid_argument("cross_attention: inner dim not divisible by head count");
    a.to_q = LinearLayer::make(inner, inner, rng);
    a.to_k = LinearLayer::make(ctx_dim, inner, rng);
    a.to_v = LinearLayer::make(ctx_dim, inner, rng);
    a.to_out = LinearLayer::make(inner, inner, rng);
    return a;
}

Tensorf CrossAttention::forward(const Tensorf& x, const Tensorf& ctx) const {
    const int64_t b = x.dim(0), m = x.dim(1), inner = x.dim(2);
    const int64_t lc = ctx.dim(1);
    const int64_t h = heads, dh = inner / heads;
    auto split = [&](const Tensorf& t, int64_t len) {
        return permute(reshape(t, {b, len, h, dh}), {0, 2, 1, 3}); // [B, H, len, dh]
    };
    auto q = split(to_q(x), m);
    auto k = split(to_k(ctx), lc);
    auto v = split(to_v(ctx), lc);
    auto att = attention(q, k, v); // [B, H, M, dh]
    auto merged = reshape(permute(att, {0, 2, 1, 3}), {b, m, inner});
    return to_out(merged);
}

void CrossAttention::collect(const std::string& prefix, Params& out) {
    to_q.collect(prefix + ".q", out);
    to_k.collect(prefix + ".k", out);
    to_v.collect(prefix + ".v", out);
    to_out.collect(prefix + ".out", out);
}

TransformerBlock1d TransformerBlock1d::make(int inner, int ctx_dim, int head_dim, Rng& rng) {
    TransformerBlock1d t;
    t.ln1 = LayerNormLayer::make(inner);
    t.ln2 = LayerNormLayer::make(inner);
    t.ln3 = LayerNormLayer::make(inner);
    t.self_attn = CrossAttention::make(inner, inner, head_dim, rng);
    t.cross_attn = CrossAttention::make(inner, ctx_dim, head_dim, rng);
    t.ff1 = LinearLayer::make(inner, 4 * inner, rng);
    t.ff2 = LinearLayer::make(4 * inner, inner, rng, /*zero_init=*/true);
    return t;
}

Tensorf TransformerBlock1d::forward(const Tensorf& x, const Tensorf& ctx) const {
    auto h = x;
    auto n1 = ln1(h);
    h = add(h, self_attn.forward(n1, n1));
    h = add(h, cross_attn.forward(ln2(h), ctx));
    h = add(h, ff2(silu(ff1(ln3(h)))));
    return h;
}

void TransformerBlock1d::collect(const std::string& prefix, Params& out) {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    ln3.collect(prefix + ".ln3", out);
    self_attn.collect(prefix + ".self", out);
    cross_attn.collect(prefix + ".cross", out);
    ff1.collect(prefix + ".ff1", out);
    ff2.collect(prefix + ".ff2", out);
}

SpatialTransformer1d SpatialTransformer1d::make(int ch, int ctx_dim, int head_dim, int norm_groups,
                                                Rng& rng) {
    SpatialTransformer1d s;
    s.norm = GroupNormLayer::make(ch, norm_groups);
    s.proj_in = Conv1dLayer::make(ch, ch, 1, 1, 0, rng);
    s.block = TransformerBlock1d::make(ch, ctx_dim, head_dim, rng);
    s.proj_out = Conv1dLayer::make(ch, ch, 1, 1, 0, rng, /*zero_init=*/true);
    return s;
}

Tensorf SpatialTransformer1d::forward(const Tensorf& x, const Tensorf& ctx) const {
    const std::vector<int> to_seq{0, 2, 1};
    auto h = proj_in(norm(x));
    auto seq = permute(h, to_seq); // [B, M, C]
    seq = block.forward(seq, ctx);
    return add(proj_out(permute(seq, to_seq)), x);
}

void SpatialTransformer1d::collect(const std::string& prefix, Params& out) {
    norm.collect(prefix + ".norm", out);
    proj_in.collect(prefix + ".proj_in", out);
    block.collect(prefix + ".block", out);
    proj_out.collect(prefix + ".proj_out", out);
}

// ---- UNet --------------------------------------------------------------------------

Tensorf UNet1d::forward(const Tensorf& z, const std::vector<double>& t, const Tensorf& ctx) const {
    if (static_cast<int64_t>(t.size()) != z.dim(0))
        throw std::invalid_argument("unet: need one timestep per sample");
    auto temb = time2(silu(time1(sinusoidal_embedding<float>(t, model_channels))));

    auto h = conv_in(z);
    std::vector<Tensorf> skips{h};
    for (const auto& level : down_levels) {
        for (const auto& st : level.stages) {
            h = st.res.forward(h, temb);
            h = st.attn.forward(h, ctx);
            skips.push_back(h);
        }
        if (level.down) {
            h = (*level.down)(h);
            skips.push_back(h);
        }
    }
    h = mid1.forward(h, temb);
    h = mid_attn.forward(h, ctx);
    h = mid2.forward(h, temb);
    for (const auto& level : up_levels) {
        for (const auto& st : level.stages) {
            h = concat<float>({h, skips.back()}, 1);
            skips.pop_back();
            h = st.res.forward(h, temb);
            h = st.attn.forward(h, ctx);
        }
        if (level.up) h = (*level.up)(h);
    }
    return conv_out(silu(norm_out(h)));
}

void UNet1d::collect(const std::string& prefix, Params& out) {
    time1.collect(prefix + ".time1", out);
    time2.collect(prefix + ".time2", out);
    conv_in.collect(prefix + ".conv_in", out);
    for (size_t i = 0; i < down_levels.size(); ++i) {
        auto& level = down_levels[i];
        for (size_t j = 0; j < level.stages.size(); ++j) {
            const auto p = prefix + ".down" + std::to_string(i) + ".s" + std::to_string(j);
            level.stages[j].res.collect(p + ".res", out);
            level.stages[j].attn.collect(p + ".attn", out);
        }
        if (level.down) level.down->collect(prefix + ".down" + std::to_string(i) + ".ds", out);
    }
    mid1.collect(prefix + ".mid1", out);
    mid_attn.collect(prefix + ".mid_attn", out);
    mid2.collect(prefix + ".mid2", out);
    for (size_t i = 0; i < up_levels.size(); ++i) {
        auto& level = up_levels[i];
        for (size_t j = 0; j < level.stages.size(); ++j) {
            const auto p = prefix + ".up" + std::to_string(i) + ".s" + std::to_string(j);
            level.stages[j].res.collect(p + ".res", out);
            level.stages[j].attn.collect(p + ".attn", out);
        }
        if (level.up) level.up->collect(prefix + ".up" + std::to_string(i) + ".us", out);
    }
    norm_out.collect(prefix + ".norm_out", out);
    conv_out.collect(prefix + ".conv_out", out);
}

ClassEmbedder ClassEmbedder::make(int embed_dim, Rng& rng) {
    ClassEmbedder e;
    e.table = Tensorf::randn({3, embed_dim}, rng, 0.02f).set_requires_grad(true);
    return e;
}

Tensorf ClassEmbedder::context(const std::vector<int64_t>& labels) const {
    auto emb = embedding(table, labels);
    return reshape(emb, {emb.dim(0), 1, emb.dim(1)});
}

void ClassEmbedder::collect(const std::string& prefix, Params& out) {
    out.push_back({prefix + ".table", table});
}

// ---- model -------------------------------------------------------------------------

LdmModel LdmModel::init(const LdmConfig& cfg, int z_channels, int64_t latent_len, uint64_t seed) {
    Rng rng(derive_seed(seed, "ldm_init"));
    LdmModel m;
    m.cfg = cfg;
    m.z_channels = z_channels;
    m.latent_len = latent_len;
    m.schedule = NoiseSchedule::build(cfg.t_steps, cfg.beta_start, cfg.beta_end);
    m.embedder = ClassEmbedder::make(cfg.embed_dim, rng);

    const int mc = cfg.model_channels;
    const int temb_dim = 4 * mc;
    auto& u = m.unet;
    u.model_channels = mc;
    u.time1 = LinearLayer::make(mc, temb_dim, rng);
    u.time2 = LinearLayer::make(temb_dim, temb_dim, rng);
    u.conv_in = Conv1dLayer::make(z_channels, mc, 3, 1, 1, rng);

    const auto levels = static_cast<int>(cfg.mults.size());
    std::vector<int> skip_chans{mc};
    int ch = mc;
    for (int i = 0; i < levels; ++i) {
        UNet1d::DownLevel level;
        const int out_ch = mc * cfg.mults[static_cast<size_t>(i)];
        for (int j = 0; j < cfg.res_blocks; ++j) {
            UNet1d::Stage st;
            st.res = ResBlockT::make(ch, out_ch, temb_dim, cfg.norm_groups, rng);
            st.attn = SpatialTransformer1d::make(out_ch, cfg.embed_dim, cfg.head_dim,
                                                 cfg.norm_groups, rng);
            ch = out_ch;
            skip_chans.push_back(ch);
            level.stages.push_back(std::move(st));
        }
        if (i + 1 < levels) {
            level.down = Conv1dLayer::make(ch, ch, 3, 2, 1, rng);
            skip_chans.push_back(ch);
        }
        u.down_levels.push_back(std::move(level));
    }
    u.mid1 = ResBlockT::make(ch, ch, temb_dim, cfg.norm_groups, rng);
    u.mid_attn = SpatialTransformer1d::make(ch, cfg.embed_dim, cfg.head_dim, cfg.norm_groups, rng);
    u.mid2 = ResBlockT::make(ch, ch, temb_dim, cfg.norm_groups, rng);
    for (int i = levels - 1; i >= 0; --i) {
        UNet1d::UpLevel level;
        const int out_ch = mc * cfg.mults[static_cast<size_t>(i)];
        for (int j = 0; j <= cfg.res_blocks; ++j) {
            UNet1d::Stage st;
            const int skip_ch = skip_chans.back();
            skip_chans.pop_back();
            st.res = ResBlockT::make(ch + skip_ch, out_ch, temb_dim, cfg.norm_groups, rng);
            st.attn = SpatialTransformer1d::make(out_ch, cfg.embed_dim, cfg.head_dim,
                                                 cfg.norm_groups, rng);
            ch = out_ch;
            level.stages.push_back(std::move(st));
        }
        if (i > 0) level.up = ConvT1dLayer::make(ch, ch, 4, 2, 1, rng);
        u.up_levels.push_back(std::move(level));
    }
    u.norm_out = GroupNormLayer::make(ch, cfg.norm_groups);
    u.conv_out = Conv1dLayer::make(ch, z_channels, 3, 1, 1, rng, /*zero_init=*/true);
    return m;
}

Params LdmModel::params() {
    Params p;
    unet.collect("unet", p);
    embedder.collect("embed", p);
    return p;
}

LdmModel LdmModel::clone() const {
    LdmModel c = LdmModel::init(cfg, z_channels, latent_len, 0);
    c.latent_scale = latent_scale;
    c.train_cases = train_cases;
    c.train_controls = train_controls;
    auto& self = const_cast<LdmModel&>(*this);
    auto src = self.params();
    auto dst = c.params();
    for (size_t i = 0; i < src.size(); ++i) dst[i].value.data() = src[i].value.data();
    return c;
}

Tensorf LdmModel::epsilon(const Tensorf& z_t, const std::vector<double>& t,
                          const std::vector<int64_t>& labels) const {
    return unet.forward(z_t, t, embedder.context(labels));
}

// ---- training objective ---------------------------------------------------------------

Tensorf ldm_loss(const LdmModel& m, const Tensorf& z0, const std::vector<int64_t>& labels,
                 double p_uncond, Rng& rng, std::vector<int64_t>* used_labels) {
    if (p_uncond < 0 || p_uncond >= 1)
        throw std::invalid_argument("ldm_loss: p_uncond must lie in [0,1)");
    const int64_t b = z0.dim(0);
    if (static_cast<int64_t>(labels.size()) != b)
        throw std::invalid_argument("ldm_loss: one label per sample required");
    std::vector<int> t(static_cast<size_t>(b));
    std::vector<double> td(static_cast<size_t>(b));
    std::vector<int64_t> cond(labels);
    for (int64_t i = 0; i < b; ++i) {
        t[static_cast<size_t>(i)] =
            static_cast<int>(rng.below(static_cast<uint64_t>(m.schedule.t_steps)));
        td[static_cast<size_t>(i)] = t[static_cast<size_t>(i)];
        if (rng.uniform() < p_uncond) cond[static_cast<size_t>(i)] = ClassEmbedder::kUncond;
    }
    if (used_labels) *used_labels = cond;
    auto eps = Tensorf::randn(z0.shape(), rng);
    auto z_t = q_sample(z0, t, eps, m.schedule);
    auto eps_hat = m.epsilon(z_t, td, cond);
    auto diff = sub(eps_hat, eps);
    auto loss = mean_all(mul(diff, diff));
    if (!std::isfinite(loss.item())) throw std::runtime_error("ldm_loss: non-finite loss");
    return loss;
}

// ---- guidance and sampling ----------------------------------------------------------

namespace {

uint64_t tensor_hash(const Tensorf& t) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto v : t.data()) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (b * 8)) & 0xff;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

Tensorf traced_epsilon(const LdmModel& m, const Tensorf& z_t, double t, int64_t label,
                       EpsTrace* trace) {
    const auto b = z_t.dim(0);
    if (trace) trace->calls.push_back({t, label, tensor_hash(z_t)});
    return m.epsilon(z_t, std::vector<double>(static_cast<size_t>(b), t),
                     std::vector<int64_t>(static_cast<size_t>(b), label));
}

// Fractional timestep whose sigma matches the requested value, interpolated
// on log-sigma between table entries.
double sigma_to_t(const NoiseSchedule& s, double sigma) {
    const int T = s.t_steps;
    if (sigma <= s.sigma(0)) return 0.0;
    if (sigma >= s.sigma(T - 1)) return static_cast<double>(T - 1);
    int lo = 0, hi = T - 1;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (s.sigma(mid) < sigma)
            lo = mid;
        else
            hi = mid;
    }
    const double ls = std::log(sigma);
    const double ll = std::log(s.sigma(lo));
    const double lh = std::log(s.sigma(hi));
    return lo + (ls - ll) / (lh - ll);
}

} // namespace

Tensorf cfg_epsilon(const LdmModel& m, const Tensorf& z_t, double t, int64_t label, double w,
                    EpsTrace* trace) {
    if (w < 0) throw std::invalid_argument("cfg_epsilon: guidance scale must be >= 0");
    if (w == 1.0) return traced_epsilon(m, z_t, t, label, trace);
    auto eps_u = traced_epsilon(m, z_t, t, ClassEmbedder::kUncond, trace);
    auto eps_c = traced_epsilon(m, z_t, t, label, trace);
    return add(eps_u, scale(sub(eps_c, eps_u), static_cast<float>(w)));
}

Tensorf euler_integrate(const NoiseSchedule& schedule, const SamplerConfig& cfg, int z_channels,
                        int64_t latent_len, int64_t n, uint64_t seed, const EpsFn& eps_fn) {
    if (cfg.steps < 1 || cfg.steps > schedule.t_steps)
        throw std::invalid_argument("euler_sample: steps must lie in [1, T]");
    const double sigma_min = schedule.sigma(0);
    const double sigma_max = schedule.sigma(schedule.t_steps - 1);
    const double rho = cfg.rho;

    std::vector<double> sigmas;
    sigmas.reserve(static_cast<size_t>(cfg.steps) + 1);
    if (cfg.steps == 1) {
        sigmas.push_back(sigma_max);
    } else {
        const double smax = std::pow(sigma_max, 1.0 / rho);
        const double smin = std::pow(sigma_min, 1.0 / rho);
        for (int i = 0; i < cfg.steps; ++i) {
            const double f = static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
            sigmas.push_back(std::pow(smax + f * (smin - smax), rho));
        }
    }
    sigmas.push_back(0.0);

    Rng rng(derive_seed(seed, "euler_sample"));
    Tensorf x = Tensorf::randn({n, z_channels, latent_len}, rng, static_cast<float>(sigma_max));
    for (int i = 0; i < cfg.steps; ++i) {
        const double s = sigmas[static_cast<size_t>(i)];
        const double t = sigma_to_t(schedule, s);
        const auto z_in = scale(x, static_cast<float>(1.0 / std::sqrt(1.0 + s * s)));
        const auto eps = eps_fn(z_in, s, t);
        const double ds = sigmas[static_cast<size_t>(i) + 1] - s;
        x = add(x, scale(eps, static_cast<float>(ds)));
    }
    for (const auto v : x.data())
        if (!std::isfinite(v)) throw std::runtime_error("euler_sample: non-finite sample");
    return x;
}

Tensorf euler_sample(const LdmModel& m, const SamplerConfig& cfg, int64_t label, int64_t n,
                     uint64_t seed) {
    return euler_integrate(m.schedule, cfg, m.z_channels, m.latent_len, n, seed,
                           [&](const Tensorf& z_in, double, double t) {
                               return cfg_epsilon(m, z_in, t, label, cfg.guidance, cfg.trace);
                           });
}

// ---- training ----------------------------------------------------------------------------

namespace {

double cosine_warmup_lr(double peak, int epoch, int warmup, int total) {
    if (epoch < warmup) return peak * static_cast<double>(epoch + 1) / static_cast<double>(warmup + 1);
    const int span = std::max(1, total - 1 - warmup);
    const double f = static_cast<double>(epoch - warmup) / static_cast<double>(span);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, f)));
}

double validation_loss(const LdmModel& m, const Tensorf& latents,
                       const std::vector<int64_t>& labels, uint64_t noise_seed) {
    Rng rng(noise_seed);
    const int64_t n = latents.dim(0);
    const int64_t batch = 256;
    const int64_t per = latents.numel() / n;
    double acc = 0;
    int64_t batches = 0;
    for (int64_t b = 0; b < n; b += batch) {
        const auto e = std::min(n, b + batch);
        Tensorf zb = Tensorf::zeros({e - b, latents.dim(1), latents.dim(2)});
        std::copy(latents.data().begin() + static_cast<std::ptrdiff_t>(b * per),
                  latents.data().begin() + static_cast<std::ptrdiff_t>(e * per),
                  zb.data().begin());
        std::vector<int64_t> lb(labels.begin() + static_cast<std::ptrdiff_t>(b),
                                labels.begin() + static_cast<std::ptrdiff_t>(e));
        acc += ldm_loss(m, zb, lb, 0.0, rng).item();
        ++batches;
    }
    return acc / static_cast<double>(std::max<int64_t>(1, batches));
}

} // namespace

double ldm_validation_loss(const LdmModel& m, const Tensorf& latents,
                           const std::vector<int64_t>& labels, uint64_t seed) {
    Tensorf scaled = latents.detach();
    for (auto& v : scaled.data()) v *= m.latent_scale;
    return validation_loss(m, scaled, labels, seed);
}

LdmTrainResult train_ldm(const Tensorf& train_latents, const std::vector<int64_t>& train_labels,
                         const Tensorf& val_latents, const std::vector<int64_t>& val_labels,
                         const LdmConfig& cfg, uint64_t seed) {
    if (train_latents.ndim() != 3)
        throw std::invalid_argument("train_ldm: latents must be [n, z, m]");
    const int64_t n = train_latents.dim(0);
    if (static_cast<int64_t>(train_labels.size()) != n)
        throw std::invalid_argument("train_ldm: one label per latent required");

    const auto zc = static_cast<int>(train_latents.dim(1));
    const int64_t ml = train_latents.dim(2);
    LdmModel model = LdmModel::init(cfg, zc, ml, seed);

    // Scale latents to roughly unit variance before diffusion.
    double s2 = 0;
    for (const auto v : train_latents.data()) s2 += static_cast<double>(v) * v;
    const double std_all = std::sqrt(s2 / static_cast<double>(train_latents.numel()));
    model.latent_scale = std_all > 1e-8 ? static_cast<float>(1.0 / std_all) : 1.f;
    for (const auto l : train_labels)
        (l ? model.train_cases : model.train_controls) += 1;

    auto scaled = [&](const Tensorf& t) {
        Tensorf out = t.detach();
        for (auto& v : out.data()) v *= model.latent_scale;
        return out;
    };
    const Tensorf ztrain = scaled(train_latents);
    const Tensorf zval = scaled(val_latents);

    auto params = model.params();
    Adamf opt(params, static_cast<float>(cfg.lr));
    Emaf ema(params, static_cast<float>(cfg.ema_decay), /*warmup=*/true);
    Rng rng(derive_seed(seed, "ldm_train"));
    const uint64_t val_seed = derive_seed(seed, "ldm_val");

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    const int64_t per = model.z_channels * model.latent_len;

    LdmTrainResult result;
    std::vector<std::vector<float>> best_shadows = ema.shadows();
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs && !result.aborted_nan; ++epoch) {
        opt.set_lr(static_cast<float>(cosine_warmup_lr(cfg.lr, epoch, cfg.warmup_epochs, cfg.epochs)));
        rng.shuffle(order.begin(), order.end());
        double ep_loss = 0;
        int64_t steps = 0;
        for (int64_t b = 0; b < n; b += cfg.batch) {
            const auto e = std::min<int64_t>(n, b + cfg.batch);
            Tensorf zb = Tensorf::zeros({e - b, model.z_channels, model.latent_len});
            std::vector<int64_t> lb(static_cast<size_t>(e - b));
            for (int64_t i = b; i < e; ++i) {
                const auto src = order[static_cast<size_t>(i)];
                std::copy(ztrain.data().begin() + static_cast<std::ptrdiff_t>(src * per),
                          ztrain.data().begin() + static_cast<std::ptrdiff_t>((src + 1) * per),
                          zb.data().begin() + static_cast<std::ptrdiff_t>((i - b) * per));
                lb[static_cast<size_t>(i - b)] = train_labels[static_cast<size_t>(src)];
            }
            Tapef tape;
            Tensorf loss;
            try {
                loss = ldm_loss(model, zb, lb, cfg.p_uncond, rng);
            } catch (const std::runtime_error&) {
                result.aborted_nan = true;
                break;
            }
            tape.backward(loss);
            opt.step();
            opt.zero_grad();
            ema.update(params);
            ep_loss += loss.item();
            ++steps;
        }
        if (result.aborted_nan) break;

        LdmModel eval = model.clone();
        auto eval_params = eval.params();
        ema.copy_to(eval_params);
        const double vloss = validation_loss(eval, zval, val_labels, val_seed);

        LdmHistoryRow row;
        row.epoch = epoch;
        row.lr = opt.lr();
        row.train_loss = steps ? ep_loss / static_cast<double>(steps) : 0;
        row.val_loss = vloss;
        result.history.push_back(row);
        if (vloss < best_val) {
            best_val = vloss;
            best_shadows = ema.shadows();
        }
    }

    result.model = model.clone();
    auto out_params = result.model.params();
    for (size_t i = 0; i < out_params.size(); ++i) out_params[i].value.data() = best_shadows[i];
    result.best_val_loss = best_val;
    return result;
}

// ---- generation ----------------------------------------------------------------------------

GeneratedCohort generate_cohort(const VaeModel& vae, const LdmModel& ldm,
                                const SamplerConfig& sampler,
                                const std::map<int, int64_t>& class_counts,
                                const std::vector<Variant>& variants,
                                const std::vector<std::string>& snp_ids, uint64_t seed) {
    if (ldm.z_channels != vae.cfg.z_channels || ldm.latent_len != vae.cfg.latent_len())
        throw std::invalid_argument("generate_cohort: latent shape mismatch between VAE and LDM");
    const int64_t L = vae.cfg.seq_len;
    std::vector<uint8_t> dosages;
    std::vector<uint8_t> labels;
    const int64_t chunk = 256;
    for (const auto& [cls, count] : class_counts) {
        int64_t done = 0;
        uint64_t piece = 0;
        while (done < count) {
            const int64_t take = std::min(chunk, count - done);
            const uint64_t cseed =
                derive_seed(seed, "gen_c" + std::to_string(cls) + "_" + std::to_string(piece));
            auto lat = euler_sample(ldm, sampler, cls, take, cseed);
            for (auto& v : lat.data()) v /= ldm.latent_scale;
            const auto decoded = decode_argmax(vae_decode(vae, lat));
            dosages.insert(dosages.end(), decoded.begin(), decoded.end());
            labels.insert(labels.end(), static_cast<size_t>(take), static_cast<uint8_t>(cls));
            done += take;
            ++piece;
        }
    }
    const auto total = static_cast<int64_t>(labels.size());
    std::vector<std::string> sample_ids;
    sample_ids.reserve(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        std::string num = std::to_string(i);
        std::string id = "syn";
        for (size_t k = num.size(); k < 5; ++k) id += '0';
        sample_ids.push_back(id + num);
    }
    GeneratedCohort out;
    out.genotypes =
        GenotypeMatrix(total, L, dosages, variants, std::move(sample_ids), {}, snp_ids);
    out.phenotype.labels = std::move(labels);
    out.phenotype.trait = "generated";
    return out;
}

std::map<int, int64_t> matched_counts(const LdmModel& m) {
    return {{0, m.train_controls}, {1, m.train_cases}};
}

std::map<int, int64_t> augmented_counts(const LdmModel& m) {
    return {{0, m.train_controls}, {1, m.train_controls}};
}

// ---- persistence ----------------------------------------------------------------------------

void save_ldm(const LdmModel& m, const std::string& path) {
    SnpfFile f;
    f.add_scalar("config/model_channels", m.cfg.model_channels);
    f.add_scalar("config/res_blocks", m.cfg.res_blocks);
    f.add_scalar("config/head_dim", m.cfg.head_dim);
    f.add_scalar("config/embed_dim", m.cfg.embed_dim);
    f.add_scalar("config/norm_groups", m.cfg.norm_groups);
    f.add_scalar("config/t_steps", m.cfg.t_steps);
    f.add_scalar("config/beta_start", m.cfg.beta_start);
    f.add_scalar("config/beta_end", m.cfg.beta_end);
    f.add_scalar("config/p_uncond", m.cfg.p_uncond);
    f.add_scalar("config/lr", m.cfg.lr);
    f.add_scalar("config/batch", m.cfg.batch);
    f.add_scalar("config/epochs", m.cfg.epochs);
    f.add_scalar("config/warmup_epochs", m.cfg.warmup_epochs);
    f.add_scalar("config/ema_decay", m.cfg.ema_decay);
    std::vector<double> mv(m.cfg.mults.begin(), m.cfg.mults.end());
    f.add(SnpfTensor::from("config/mults",
                           Tensord::from_vector({static_cast<int64_t>(mv.size())}, mv)));
    f.add_scalar("config/z_channels", m.z_channels);
    f.add_scalar("config/latent_len", static_cast<double>(m.latent_len));
    f.add_scalar("state/latent_scale", m.latent_scale);
    f.add_scalar("state/train_cases", static_cast<double>(m.train_cases));
    f.add_scalar("state/train_controls", static_cast<double>(m.train_controls));
    auto& self = const_cast<LdmModel&>(m);
    for (const auto& p : self.params()) f.add(SnpfTensor::from("par/" + p.name, p.value));
    f.write(path);
}

LdmModel load_ldm(const std::string& path) {
    const SnpfFile f = SnpfFile::read(path);
    LdmConfig cfg;
    cfg.model_channels = static_cast<int>(f.scalar("config/model_channels"));
    cfg.res_blocks = static_cast<int>(f.scalar("config/res_blocks"));
    cfg.head_dim = static_cast<int>(f.scalar("config/head_dim"));
    cfg.embed_dim = static_cast<int>(f.scalar("config/embed_dim"));
    cfg.norm_groups = static_cast<int>(f.scalar("config/norm_groups"));
    cfg.t_steps = static_cast<int>(f.scalar("config/t_steps"));
    cfg.beta_start = f.scalar("config/beta_start");
    cfg.beta_end = f.scalar("config/beta_end");
    cfg.p_uncond = f.scalar("config/p_uncond");
    cfg.lr = f.scalar("config/lr");
    cfg.batch = static_cast<int>(f.scalar("config/batch"));
    cfg.epochs = static_cast<int>(f.scalar("config/epochs"));
    cfg.warmup_epochs = static_cast<int>(f.scalar("config/warmup_epochs"));
    cfg.ema_decay = f.scalar("config/ema_decay");
    cfg.mults.clear();
    for (const auto v : f.get("config/mults").f64) cfg.mults.push_back(static_cast<int>(v));

    LdmModel m = LdmModel::init(cfg, static_cast<int>(f.scalar("config/z_channels")),
                                static_cast<int64_t>(f.scalar("config/latent_len")), 0);
    m.latent_scale = static_cast<float>(f.scalar("state/latent_scale"));
    m.train_cases = static_cast<int64_t>(f.scalar("state/train_cases"));
    m.train_controls = static_cast<int64_t>(f.scalar("state/train_controls"));
    for (auto& p : m.params()) {
        const auto& t = f.get("par/" + p.name);
        if (t.shape != p.value.shape())
            throw std::runtime_error("load_ldm: shape mismatch for '" + p.name + "'");
        p.value.data() = t.to_f32().data();
    }
    return m;
}

void write_ldm_history(const std::string& path, const std::vector<LdmHistoryRow>& history) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ldm history: cannot open '" + path + "' for writing");
    os.precision(10);
    os << "epoch\tlr\ttrain_loss\tval_loss\n";
    for (const auto& r : history)
        os << r.epoch << "\t" << r.lr << "\t" << r.train_loss << "\t" << r.val_loss << "\n";
}

void save_latents(const LatentDataset& d, const std::string& path) {
    SnpfFile f;
    f.add(SnpfTensor::from("train/latents", d.train_latents));
    f.add(SnpfTensor::from("val/latents", d.val_latents));
    auto labels_tensor = [](const std::vector<int64_t>& l) {
        std::vector<double> v(l.begin(), l.end());
        return Tensord::from_vector({static_cast<int64_t>(v.size())}, v);
    };
    f.add(SnpfTensor::from("train/labels", labels_tensor(d.train_labels)));
    f.add(SnpfTensor::from("val/labels", labels_tensor(d.val_labels)));
    f.write(path);
}

LatentDataset load_latents(const std::string& path) {
    const SnpfFile f = SnpfFile::read(path);
    LatentDataset d;
    d.train_latents = f.get("train/latents").to_f32();
    d.val_latents = f.get("val/latents").to_f32();
    for (const auto v : f.get("train/labels").f64)
        d.train_labels.push_back(static_cast<int64_t>(v));
    for (const auto v : f.get("val/labels").f64) d.val_labels.push_back(static_cast<int64_t>(v));
    return d;
}

} // namespace snpforge
