#include "snpforge/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace snpforge {

namespace {

std::vector<int64_t> dosage_targets(const GenotypeMatrix& g, std::span<const int64_t> rows) {
    std::vector<int64_t> t;
    t.reserve(rows.size() * static_cast<size_t>(g.l()));
    for (const auto r : rows)
        for (int64_t j = 0; j < g.l(); ++j) t.push_back(g.dosage(r, j));
    return t;
}

std::vector<int64_t> iota_rows(int64_t n) {
    std::vector<int64_t> rows(static_cast<size_t>(n));
    std::iota(rows.begin(), rows.end(), int64_t{0});
    return rows;
}

double grad_l2(const Tensorf& t) {
    if (!t.has_grad()) return 0.0;
    double acc = 0;
    for (const auto v : t.impl()->grad) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
}

void check_finite(double v, const char* component) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("vae_loss: non-finite ") + component + " component");
}

} // namespace

// ---- config -------------------------------------------------------------------

VaeConfig VaeConfig::desk(int64_t seq_len) {
    VaeConfig c;
    c.seq_len = seq_len;
    return c;
}

VaeConfig VaeConfig::paper(int64_t seq_len) {
    VaeConfig c;
    c.seq_len = seq_len;
    c.channels = {32, 64, 64, 128, 128};
    c.downsamples = 4;
    c.z_channels = 1;
    c.norm_groups = 32;
    c.disc_start = 20001;
    c.disc_hidden = 128;
    c.lr = 4.5e-6;
    c.disc_lr = 4.5e-6;
    c.batch = 256;
    c.epochs = 400;
    c.ema_decay = 0.9999;
    return c;
}

void VaeConfig::validate() const {
    if (channels.empty()) throw std::invalid_argument("vae config: empty channel progression");
    if (seq_len <= 0 || seq_len % (int64_t{1} << downsamples) != 0)
        throw std::invalid_argument("vae config: seq_len " + std::to_string(seq_len) +
                                    " not divisible by 2^" + std::to_string(downsamples));
    if (z_channels < 1 || batch < 1 || epochs < 0)
        throw std::invalid_argument("vae config: invalid z_channels/batch/epochs");
}

// ---- blocks ------------------------------------------------------------------

ResBlock1d ResBlock1d::make(int in_ch, int out_ch, int norm_groups, Rng& rng) {
    ResBlock1d b;
    b.n1 = GroupNormLayer::make(in_ch, norm_groups);
    b.c1 = Conv1dLayer::make(in_ch, out_ch, 3, 1, 1, rng);
    b.n2 = GroupNormLayer::make(out_ch, norm_groups);
    b.c2 = Conv1dLayer::make(out_ch, out_ch, 3, 1, 1, rng, /*zero_init=*/true);
    if (in_ch != out_ch) b.skip = Conv1dLayer::make(in_ch, out_ch, 1, 1, 0, rng);
    return b;
}

Tensorf ResBlock1d::forward(const Tensorf& x) const {
    auto h = c1(silu(n1(x)));
    h = c2(silu(n2(h)));
    return add(h, skip ? (*skip)(x) : x);
}

void ResBlock1d::collect(const std::string& prefix, Params& out) {
    n1.collect(prefix + ".n1", out);
    c1.collect(prefix + ".c1", out);
    n2.collect(prefix + ".n2", out);
    c2.collect(prefix + ".c2", out);
    if (skip) skip->collect(prefix + ".skip", out);
}

AttnBlock1d AttnBlock1d::make(int ch, int norm_groups, Rng& rng) {
    AttnBlock1d a;
    a.norm = GroupNormLayer::make(ch, norm_groups);
    a.q = Conv1dLayer::make(ch, ch, 1, 1, 0, rng);
    a.k = Conv1dLayer::make(ch, ch, 1, 1, 0, rng);
    a.v = Conv1dLayer::make(ch, ch, 1, 1, 0, rng);
    a.proj = Conv1dLayer::make(ch, ch, 1, 1, 0, rng, /*zero_init=*/true);
    return a;
}

Tensorf AttnBlock1d::forward(const Tensorf& x) const {
    const std::vector<int> to_seq{0, 2, 1};
    auto h = norm(x);
    auto qs = permute(q(h), to_seq);
    auto ks = permute(k(h), to_seq);
    auto vs = permute(v(h), to_seq);
    auto attn = attention(qs, ks, vs);
    return add(proj(permute(attn, to_seq)), x);
}

void AttnBlock1d::collect(const std::string& prefix, Params& out) {
    norm.collect(prefix + ".norm", out);
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    proj.collect(prefix + ".proj", out);
}

// ---- encoder / decoder -----------------------------------------------------------

Tensorf VaeEncoder::forward(const Tensorf& x) const {
    auto h = conv_in(x);
    const auto levels = down_after.size();
    size_t down_idx = 0;
    for (size_t i = 0; i < levels; ++i) {
        h = blocks[2 * i].forward(h);
        h = blocks[2 * i + 1].forward(h);
        if (down_after[i]) h = downs[down_idx++](h);
    }
    for (int e = 0; e < extra_downs; ++e) h = downs[down_idx++](h);
    h = mid1.forward(h);
    h = mid_attn.forward(h);
    h = mid2.forward(h);
    return conv_out(silu(norm_out(h)));
}

void VaeEncoder::collect(const std::string& prefix, Params& out) {
    conv_in.collect(prefix + ".conv_in", out);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    for (size_t i = 0; i < downs.size(); ++i)
        downs[i].collect(prefix + ".down" + std::to_string(i), out);
    mid1.collect(prefix + ".mid1", out);
    mid_attn.collect(prefix + ".mid_attn", out);
    mid2.collect(prefix + ".mid2", out);
    norm_out.collect(prefix + ".norm_out", out);
    conv_out.collect(prefix + ".conv_out", out);
}

Tensorf VaeDecoder::forward(const Tensorf& z) const {
    auto h = conv_in(z);
    h = mid1.forward(h);
    h = mid_attn.forward(h);
    h = mid2.forward(h);
    // Extra ups first (mirror of the trailing encoder downsamplers), then one
    // up before each level that had a downsampler.
    size_t up_idx = 0, block_idx = 0;
    for (int e = 0; e < extra_ups; ++e) h = ups[up_idx++](h);
    for (size_t i = 0; i < up_before.size(); ++i) {
        if (up_before[i]) h = ups[up_idx++](h);
        h = blocks[block_idx++].forward(h);
        h = blocks[block_idx++].forward(h);
    }
    return conv_out(silu(norm_out(h)));
}

void VaeDecoder::collect(const std::string& prefix, Params& out) {
    conv_in.collect(prefix + ".conv_in", out);
    mid1.collect(prefix + ".mid1", out);
    mid_attn.collect(prefix + ".mid_attn", out);
    mid2.collect(prefix + ".mid2", out);
    for (size_t i = 0; i < ups.size(); ++i) ups[i].collect(prefix + ".up" + std::to_string(i), out);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    norm_out.collect(prefix + ".norm_out", out);
    conv_out.collect(prefix + ".conv_out", out);
}

// ---- discriminator ------------------------------------------------------------------

Discriminator Discriminator::make(int hidden, Rng& rng) {
    Discriminator d;
    d.layers.resize(6);
    d.layers[0].conv = Conv1dLayer::make(3, hidden, 4, 2, 1, rng);
    for (int i = 1; i <= 4; ++i) {
        d.layers[static_cast<size_t>(i)].conv = Conv1dLayer::make(hidden, hidden, 4, 2, 1, rng);
        d.layers[static_cast<size_t>(i)].norm = InstanceNormLayer::make(hidden);
    }
    d.layers[5].conv = Conv1dLayer::make(hidden, 1, 3, 1, 1, rng);
    return d;
}

Tensorf Discriminator::forward(const Tensorf& x) {
    auto h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const auto w = spectral_normalize(l.conv.w, l.sn);
        h = conv1d(h, w, l.conv.b, l.conv.stride, l.conv.pad);
        if (l.norm) h = (*l.norm)(h);
        if (i + 1 < layers.size()) h = leaky_relu(h, 0.2f);
    }
    // [B, 1, len] -> per-sample score
    auto pooled = mean_axis(h, 2, false); // [B, 1]
    return reshape(pooled, {pooled.dim(0)});
}

void Discriminator::collect(const std::string& prefix, Params& out) {
    for (size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        l.conv.collect(prefix + ".conv" + std::to_string(i), out);
        if (l.norm) l.norm->collect(prefix + ".norm" + std::to_string(i), out);
    }
}

// ---- model ---------------------------------------------------------------------------

VaeModel VaeModel::init(const VaeConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "vae_init"));
    VaeModel m;
    m.cfg = cfg;
    const auto levels = static_cast<int>(cfg.channels.size());
    const int d = cfg.downsamples;

    // Encoder
    m.encoder.conv_in = Conv1dLayer::make(3, cfg.channels[0], 3, 1, 1, rng);
    int cur = cfg.channels[0];
    int downs_used = 0;
    m.encoder.down_after.assign(static_cast<size_t>(levels), 0);
    for (int i = 0; i < levels; ++i) {
        const int ch = cfg.channels[static_cast<size_t>(i)];
        m.encoder.blocks.push_back(ResBlock1d::make(cur, ch, cfg.norm_groups, rng));
        m.encoder.blocks.push_back(ResBlock1d::make(ch, ch, cfg.norm_groups, rng));
        cur = ch;
        if (downs_used < d) {
            m.encoder.downs.push_back(Conv1dLayer::make(cur, cur, 3, 2, 1, rng));
            m.encoder.down_after[static_cast<size_t>(i)] = 1;
            ++downs_used;
        }
    }
    while (downs_used < d) {
        m.encoder.downs.push_back(Conv1dLayer::make(cur, cur, 3, 2, 1, rng));
        ++m.encoder.extra_downs;
        ++downs_used;
    }
    m.encoder.mid1 = ResBlock1d::make(cur, cur, cfg.norm_groups, rng);
    m.encoder.mid_attn = AttnBlock1d::make(cur, cfg.norm_groups, rng);
    m.encoder.mid2 = ResBlock1d::make(cur, cur, cfg.norm_groups, rng);
    m.encoder.norm_out = GroupNormLayer::make(cur, cfg.norm_groups);
    m.encoder.conv_out = Conv1dLayer::make(cur, 2 * cfg.z_channels, 3, 1, 1, rng);

    // Decoder (mirror)
    cur = cfg.channels.back();
    m.decoder.conv_in = Conv1dLayer::make(cfg.z_channels, cur, 3, 1, 1, rng);
    m.decoder.mid1 = ResBlock1d::make(cur, cur, cfg.norm_groups, rng);
    m.decoder.mid_attn = AttnBlock1d::make(cur, cfg.norm_groups, rng);
    m.decoder.mid2 = ResBlock1d::make(cur, cur, cfg.norm_groups, rng);
    m.decoder.extra_ups = m.encoder.extra_downs;
    for (int e = 0; e < m.encoder.extra_downs; ++e)
        m.decoder.ups.push_back(ConvT1dLayer::make(cur, cur, 4, 2, 1, rng));
    for (int i = levels - 1; i >= 0; --i) {
        const int ch = cfg.channels[static_cast<size_t>(i)];
        const bool up = m.encoder.down_after[static_cast<size_t>(i)] != 0;
        m.decoder.up_before.push_back(up ? 1 : 0);
        if (up) m.decoder.ups.push_back(ConvT1dLayer::make(cur, cur, 4, 2, 1, rng));
        m.decoder.blocks.push_back(ResBlock1d::make(cur, ch, cfg.norm_groups, rng));
        m.decoder.blocks.push_back(ResBlock1d::make(ch, ch, cfg.norm_groups, rng));
        cur = ch;
    }
    m.decoder.norm_out = GroupNormLayer::make(cur, cfg.norm_groups);
    // zero-initialized head: an untrained decoder emits uniform class logits
    m.decoder.conv_out = Conv1dLayer::make(cur, 3, 3, 1, 1, rng, /*zero_init=*/true);

    m.log_s = Tensorf::zeros({}).set_requires_grad(true);
    m.disc = Discriminator::make(cfg.disc_hidden, rng);
    return m;
}

Params VaeModel::generator_params() {
    Params p;
    encoder.collect("enc", p);
    decoder.collect("dec", p);
    p.push_back({"log_s", log_s});
    return p;
}

Params VaeModel::discriminator_params() {
    Params p;
    if (disc) disc->collect("disc", p);
    return p;
}

VaeModel VaeModel::clone() const {
    VaeModel c = VaeModel::init(cfg, 0);
    auto& self = const_cast<VaeModel&>(*this);
    auto src = self.generator_params();
    auto dst = c.generator_params();
    for (size_t i = 0; i < src.size(); ++i) dst[i].value.data() = src[i].value.data();
    auto sd = self.discriminator_params();
    auto dd = c.discriminator_params();
    for (size_t i = 0; i < sd.size(); ++i) dd[i].value.data() = sd[i].value.data();
    if (disc && c.disc)
        for (size_t i = 0; i < disc->layers.size(); ++i)
            c.disc->layers[i].sn = disc->layers[i].sn;
    return c;
}

// ---- encode / decode / losses -----------------------------------------------------

EncodeResult vae_encode(const VaeModel& m, const Tensorf& x, const Tensorf& noise) {
    if (x.ndim() != 3 || x.dim(1) != 3 || x.dim(2) != m.cfg.seq_len)
        throw std::invalid_argument("vae_encode: expected [B,3," + std::to_string(m.cfg.seq_len) +
                                    "], got " + shape_str(x.shape()));
    auto h = m.encoder.forward(x);
    EncodeResult r;
    r.mu = slice(h, 1, 0, m.cfg.z_channels);
    r.logvar = clamp(slice(h, 1, m.cfg.z_channels, m.cfg.z_channels), -30.f, 20.f);
    r.z = reparameterize(r.mu, r.logvar, noise);
    return r;
}

Tensorf vae_decode(const VaeModel& m, const Tensorf& z) {
    if (z.ndim() != 3 || z.dim(1) != m.cfg.z_channels || z.dim(2) != m.cfg.latent_len())
        throw std::invalid_argument("vae_decode: expected [B," + std::to_string(m.cfg.z_channels) +
                                    "," + std::to_string(m.cfg.latent_len()) + "], got " +
                                    shape_str(z.shape()));
    return m.decoder.forward(z);
}

namespace {

VaeLossParts compose_vae_loss(const Tensorf& recon, const Tensorf& mu, const Tensorf& logvar,
                              const Tensorf& log_s, double beta, const Tensorf& adv,
                              double lambda_disc) {
    const auto batch = static_cast<float>(mu.dim(0));
    // KL: mean over batch of 0.5 * sum_dims(mu^2 + sigma^2 - log sigma^2 - 1)
    auto kl_elem = scale(add_scalar(sub(add(mul(mu, mu), exp(logvar)), logvar), -1.f), 0.5f);
    auto kl = scale(sum_all(kl_elem), 1.f / batch);

    VaeLossParts parts;
    parts.recon = recon.item();
    parts.kl = kl.item();
    parts.s = log_s.item();
    parts.lambda_disc = lambda_disc;
    check_finite(parts.recon, "reconstruction");
    check_finite(parts.kl, "KL");
    check_finite(parts.s, "log-variance");

    auto total = add(add(mul(recon, exp(neg(log_s))), log_s), scale(kl, static_cast<float>(beta)));
    if (adv.defined() && lambda_disc > 0) {
        parts.adv = adv.item();
        check_finite(parts.adv, "adversarial");
        total = add(total, scale(adv, static_cast<float>(lambda_disc)));
    }
    parts.total = total;
    check_finite(parts.total.item(), "total");
    return parts;
}

} // namespace

VaeLossParts vae_loss(const Tensorf& logits, const std::vector<int64_t>& targets, const Tensorf& mu,
                      const Tensorf& logvar, const Tensorf& log_s, double beta, const Tensorf& adv,
                      double lambda_disc) {
    auto recon = cross_entropy_logits(logits, targets);
    return compose_vae_loss(recon, mu, logvar, log_s, beta, adv, lambda_disc);
}

Tensorf disc_hinge_loss(const Tensorf& d_real, const Tensorf& d_fake) {
    auto real_term = relu(add_scalar(neg(d_real), 1.f));
    auto fake_term = relu(add_scalar(d_fake, 1.f));
    return add(mean_all(real_term), mean_all(fake_term));
}

double adaptive_disc_weight(Tapef& tape, const Tensorf& l_recon, const Tensorf& l_adv,
                            const Tensorf& last_decoder_weight, bool& clamped) {
    tape.backward(l_recon);
    const double recon_norm = grad_l2(last_decoder_weight);
    tape.zero_all_grads();
    tape.backward(l_adv);
    const double adv_norm = grad_l2(last_decoder_weight);
    tape.zero_all_grads();
    double lambda = recon_norm / (adv_norm + 1e-4);
    clamped = adv_norm == 0.0 || lambda > 1e4;
    lambda = std::clamp(lambda, 0.0, 1e4);
    return lambda;
}

// ---- training -------------------------------------------------------------------------

namespace {

double validation_accuracy(const VaeModel& m, const GenotypeMatrix& val, uint64_t noise_seed) {
    Rng nrng(noise_seed);
    const int64_t batch = 256;
    int64_t agree = 0, total = 0;
    const auto rows = iota_rows(val.n());
    for (int64_t b = 0; b < val.n(); b += batch) {
        const auto e = std::min(val.n(), b + batch);
        std::span<const int64_t> rs(rows.data() + b, static_cast<size_t>(e - b));
        auto x = one_hot_encode<float>(val, rs);
        auto noise =
            Tensorf::randn({e - b, m.cfg.z_channels, m.cfg.latent_len()}, nrng);
        auto enc = vae_encode(m, x, noise);
        auto logits = vae_decode(m, enc.z);
        const auto decoded = decode_argmax(logits);
        for (int64_t i = 0; i < e - b; ++i)
            for (int64_t j = 0; j < val.l(); ++j) {
                agree += decoded[static_cast<size_t>(i * val.l() + j)] == val.dosage(rs[static_cast<size_t>(i)], j);
                ++total;
            }
    }
    return static_cast<double>(agree) / static_cast<double>(total);
}

} // namespace

VaeTrainResult train_vae(const GenotypeMatrix& train, const GenotypeMatrix& val,
                         const VaeConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (train.l() != cfg.seq_len || val.l() != cfg.seq_len)
        throw std::invalid_argument("train_vae: data length does not match config seq_len");

    VaeModel model = VaeModel::init(cfg, seed);
    auto gen_params = model.generator_params();
    auto disc_params = model.discriminator_params();
    Adamf opt(gen_params, static_cast<float>(cfg.lr));
    Adamf dopt(disc_params, static_cast<float>(cfg.disc_lr));
    Emaf ema(gen_params, static_cast<float>(cfg.ema_decay), /*warmup=*/true);

    Rng rng(derive_seed(seed, "vae_train"));
    const uint64_t val_noise_seed = derive_seed(seed, "vae_val_noise");
    auto order = iota_rows(train.n());

    VaeTrainResult result;
    std::vector<std::vector<float>> best_shadows = ema.shadows();
    double best_val = -1;
    int64_t gstep = 0;
    bool warned_clamp = false;

    for (int epoch = 0; epoch < cfg.epochs && !result.aborted_nan; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double ep_recon = 0, ep_kl = 0, ep_lambda = 0;
        int64_t steps = 0;
        for (int64_t b = 0; b < train.n(); b += cfg.batch) {
            const auto e = std::min<int64_t>(train.n(), b + cfg.batch);
            std::span<const int64_t> rows(order.data() + b, static_cast<size_t>(e - b));
            auto x = one_hot_encode<float>(train, rows);
            const auto targets = dosage_targets(train, rows);
            auto noise = Tensorf::randn({e - b, cfg.z_channels, cfg.latent_len()}, rng);

            Tapef tape;
            auto enc = vae_encode(model, x, noise);
            auto logits = vae_decode(model, enc.z);
            auto recon = cross_entropy_logits(logits, targets);

            Tensorf adv;
            double lambda = 0;
            const bool disc_active = model.disc && gstep >= cfg.disc_start;
            if (disc_active) {
                auto d_fake = model.disc->forward(softmax(logits, 1));
                adv = neg(mean_all(d_fake));
                bool clamped = false;
                lambda = adaptive_disc_weight(tape, recon, adv, model.decoder.conv_out.w, clamped);
                if (clamped && !warned_clamp) {
                    std::cerr << "train_vae: adaptive discriminator weight clamped\n";
                    warned_clamp = true;
                }
            }

            VaeLossParts parts;
            try {
                parts = compose_vae_loss(recon, enc.mu, enc.logvar, model.log_s, cfg.kl_beta, adv,
                                         lambda);
            } catch (const std::runtime_error&) {
                result.aborted_nan = true;
                break;
            }
            tape.backward(parts.total);
            opt.step();
            opt.zero_grad();
            ema.update(gen_params);

            if (disc_active) {
                Tapef dtape;
                auto d_real = model.disc->forward(x);
                auto d_fake = model.disc->forward(softmax(logits.detach(), 1));
                auto hinge = disc_hinge_loss(d_real, d_fake);
                dtape.backward(hinge);
                dopt.step();
                dopt.zero_grad();
            }

            ep_recon += parts.recon;
            ep_kl += parts.kl;
            ep_lambda += parts.lambda_disc;
            ++steps;
            ++gstep;
        }
        if (result.aborted_nan) break;

        VaeModel eval = model.clone();
        auto eval_params = eval.generator_params();
        ema.copy_to(eval_params);
        const double val_acc = validation_accuracy(eval, val, val_noise_seed);

        VaeHistoryRow row;
        row.epoch = epoch;
        row.recon = steps ? ep_recon / static_cast<double>(steps) : 0;
        row.kl = steps ? ep_kl / static_cast<double>(steps) : 0;
        row.s = model.log_s.item();
        row.lambda_disc = steps ? ep_lambda / static_cast<double>(steps) : 0;
        row.val_acc = val_acc;
        result.history.push_back(row);

        if (val_acc > best_val) {
            best_val = val_acc;
            best_shadows = ema.shadows();
        }
    }

    // Checkpoint: EMA weights from the best-validation epoch.
    result.model = model.clone();
    auto out_params = result.model.generator_params();
    for (size_t i = 0; i < out_params.size(); ++i) out_params[i].value.data() = best_shadows[i];
    result.best_val_acc = best_val;
    return result;
}

// ---- inference ------------------------------------------------------------------------

GenotypeMatrix reconstruct(const VaeModel& m, const GenotypeMatrix& g, uint64_t seed) {
    Rng rng(derive_seed(seed, "reconstruct"));
    const int64_t batch = 256;
    std::vector<uint8_t> dosages(static_cast<size_t>(g.n() * g.l()));
    const auto rows = iota_rows(g.n());
    for (int64_t b = 0; b < g.n(); b += batch) {
        const auto e = std::min(g.n(), b + batch);
        std::span<const int64_t> rs(rows.data() + b, static_cast<size_t>(e - b));
        auto x = one_hot_encode<float>(g, rs);
        auto noise = Tensorf::randn({e - b, m.cfg.z_channels, m.cfg.latent_len()}, rng);
        auto enc = vae_encode(m, x, noise);
        const auto decoded = decode_argmax(vae_decode(m, enc.z));
        std::copy(decoded.begin(), decoded.end(),
                  dosages.begin() + static_cast<std::ptrdiff_t>(b * g.l()));
    }
    return GenotypeMatrix(g.n(), g.l(), dosages, g.variants(), g.sample_ids(), g.family_ids(),
                          g.snp_ids());
}

double reconstruction_accuracy(const GenotypeMatrix& original, const GenotypeMatrix& recon) {
    if (original.n() != recon.n() || original.l() != recon.l())
        throw std::invalid_argument("reconstruction_accuracy: shape mismatch");
    int64_t agree = 0;
    for (int64_t i = 0; i < original.n(); ++i)
        for (int64_t j = 0; j < original.l(); ++j)
            agree += original.dosage(i, j) == recon.dosage(i, j);
    return static_cast<double>(agree) / static_cast<double>(original.n() * original.l());
}

Tensorf encode_latents(const VaeModel& m, const GenotypeMatrix& g, uint64_t seed) {
    Rng rng(derive_seed(seed, "encode_latents"));
    const int64_t batch = 256;
    Tensorf out = Tensorf::zeros({g.n(), m.cfg.z_channels, m.cfg.latent_len()});
    const int64_t per = m.cfg.z_channels * m.cfg.latent_len();
    const auto rows = iota_rows(g.n());
    for (int64_t b = 0; b < g.n(); b += batch) {
        const auto e = std::min(g.n(), b + batch);
        std::span<const int64_t> rs(rows.data() + b, static_cast<size_t>(e - b));
        auto x = one_hot_encode<float>(g, rs);
        auto noise = Tensorf::randn({e - b, m.cfg.z_channels, m.cfg.latent_len()}, rng);
        auto enc = vae_encode(m, x, noise);
        std::copy(enc.z.data().begin(), enc.z.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    return out;
}

// ---- persistence -------------------------------------------------------------------------

void save_vae(const VaeModel& m, const GenotypeMatrix& panel_source, const std::string& path) {
    SnpfFile f;
    f.add_scalar("config/seq_len", static_cast<double>(m.cfg.seq_len));
    f.add_scalar("config/downsamples", m.cfg.downsamples);
    f.add_scalar("config/z_channels", m.cfg.z_channels);
    f.add_scalar("config/norm_groups", m.cfg.norm_groups);
    f.add_scalar("config/kl_beta", m.cfg.kl_beta);
    f.add_scalar("config/disc_start", m.cfg.disc_start);
    f.add_scalar("config/disc_hidden", m.cfg.disc_hidden);
    f.add_scalar("config/lr", m.cfg.lr);
    f.add_scalar("config/disc_lr", m.cfg.disc_lr);
    f.add_scalar("config/batch", m.cfg.batch);
    f.add_scalar("config/epochs", m.cfg.epochs);
    f.add_scalar("config/ema_decay", m.cfg.ema_decay);
    std::vector<double> chv(m.cfg.channels.begin(), m.cfg.channels.end());
    f.add(SnpfTensor::from("config/channels",
                           Tensord::from_vector({static_cast<int64_t>(chv.size())}, chv)));

    auto& self = const_cast<VaeModel&>(m);
    for (const auto& p : self.generator_params()) f.add(SnpfTensor::from("gen/" + p.name, p.value));
    for (const auto& p : self.discriminator_params())
        f.add(SnpfTensor::from("par/" + p.name, p.value));

    const auto& vars = panel_source.variants();
    const auto L = static_cast<int64_t>(vars.size());
    std::vector<double> chrom(vars.size()), pos(vars.size()), ref(vars.size()), alt(vars.size());
    for (size_t j = 0; j < vars.size(); ++j) {
        chrom[j] = vars[j].chrom;
        pos[j] = static_cast<double>(vars[j].pos);
        ref[j] = vars[j].ref;
        alt[j] = vars[j].alt;
    }
    f.add(SnpfTensor::from("variants/chrom", Tensord::from_vector({L}, chrom)));
    f.add(SnpfTensor::from("variants/pos", Tensord::from_vector({L}, pos)));
    f.add(SnpfTensor::from("variants/ref", Tensord::from_vector({L}, ref)));
    f.add(SnpfTensor::from("variants/alt", Tensord::from_vector({L}, alt)));
    f.write(path);
}

LoadedVae load_vae(const std::string& path) {
    const SnpfFile f = SnpfFile::read(path);
    VaeConfig cfg;
    cfg.seq_len = static_cast<int64_t>(f.scalar("config/seq_len"));
    cfg.downsamples = static_cast<int>(f.scalar("config/downsamples"));
    cfg.z_channels = static_cast<int>(f.scalar("config/z_channels"));
    cfg.norm_groups = static_cast<int>(f.scalar("config/norm_groups"));
    cfg.kl_beta = f.scalar("config/kl_beta");
    cfg.disc_start = static_cast<int>(f.scalar("config/disc_start"));
    cfg.disc_hidden = static_cast<int>(f.scalar("config/disc_hidden"));
    cfg.lr = f.scalar("config/lr");
    cfg.disc_lr = f.scalar("config/disc_lr");
    cfg.batch = static_cast<int>(f.scalar("config/batch"));
    cfg.epochs = static_cast<int>(f.scalar("config/epochs"));
    cfg.ema_decay = f.scalar("config/ema_decay");
    cfg.channels.clear();
    for (const auto c : f.get("config/channels").f64) cfg.channels.push_back(static_cast<int>(c));

    LoadedVae out{VaeModel::init(cfg, 0), {}, {}};
    for (auto& p : out.model.generator_params()) {
        const auto& t = f.get("gen/" + p.name);
        if (t.shape != p.value.shape())
            throw std::runtime_error("load_vae: shape mismatch for '" + p.name + "'");
        p.value.data() = t.to_f32().data();
    }
    for (auto& p : out.model.discriminator_params()) {
        if (!f.has("par/" + p.name)) continue;
        p.value.data() = f.get("par/" + p.name).to_f32().data();
    }

    const auto& chrom = f.get("variants/chrom").f64;
    const auto& pos = f.get("variants/pos").f64;
    const auto& ref = f.get("variants/ref").f64;
    const auto& alt = f.get("variants/alt").f64;
    out.variants.resize(chrom.size());
    for (size_t j = 0; j < chrom.size(); ++j) {
        out.variants[j].chrom = static_cast<uint8_t>(chrom[j]);
        out.variants[j].pos = static_cast<uint64_t>(pos[j]);
        out.variants[j].ref = static_cast<char>(ref[j]);
        out.variants[j].alt = static_cast<char>(alt[j]);
        std::string num = std::to_string(j);
        std::string id = "snp";
        for (size_t k = num.size(); k < 5; ++k) id += '0';
        out.snp_ids.push_back(id + num);
    }
    return out;
}

void write_vae_history(const std::string& path, const std::vector<VaeHistoryRow>& history) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("vae history: cannot open '" + path + "' for writing");
    os.precision(10);
    os << "epoch\trecon\tkl\ts\tlambda_disc\tval_acc\n";
    for (const auto& r : history)
        os << r.epoch << "\t" << r.recon << "\t" << r.kl << "\t" << r.s << "\t" << r.lambda_disc
           << "\t" << r.val_acc << "\n";
}

} // namespace snpforge
