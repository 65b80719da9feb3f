#ifndef SNPFORGE_VAE_HPP
#define SNPFORGE_VAE_HPP

#include <optional>
#include <string>
#include <vector>

#include "snpforge/checkpoint.hpp"
#include "snpforge/genodata.hpp"
#include "snpforge/nn.hpp"

namespace snpforge {

struct VaeConfig {
    int64_t seq_len = 64;
    std::vector<int> channels = {16, 32, 32};
    int downsamples = 4; // latent length = seq_len / 2^downsamples
    int z_channels = 4;
    int norm_groups = 8;
    double kl_beta = 1.0;
    int disc_start = 2000; // global step gating the adversarial term
    int disc_hidden = 32;
    double lr = 1e-3;
    double disc_lr = 1e-3;
    int batch = 64;
    int epochs = 60;
    double ema_decay = 0.999;

    static VaeConfig desk(int64_t seq_len);
    static VaeConfig paper(int64_t seq_len);
    int64_t latent_len() const { return seq_len >> downsamples; }
    void validate() const;
};

struct ResBlock1d {
    GroupNormLayer n1, n2;
    Conv1dLayer c1, c2;
    std::optional<Conv1dLayer> skip;

    static ResBlock1d make(int in_ch, int out_ch, int norm_groups, Rng& rng);
    Tensorf forward(const Tensorf& x) const;
    void collect(const std::string& prefix, Params& out);
};

// Single-head self-attention over the sequence axis of [B, C, L].
struct AttnBlock1d {
    GroupNormLayer norm;
    Conv1dLayer q, k, v, proj;

    static AttnBlock1d make(int ch, int norm_groups, Rng& rng);
    Tensorf forward(const Tensorf& x) const;
    void collect(const std::string& prefix, Params& out);
};

struct VaeEncoder {
    Conv1dLayer conv_in;
    std::vector<ResBlock1d> blocks;      // 2 per level
    std::vector<uint8_t> down_after;     // per level: stride-2 conv follows
    std::vector<Conv1dLayer> downs;      // all downsamplers in order
    int extra_downs = 0;                 // trailing non-expanding downsamplers
    ResBlock1d mid1, mid2;
    AttnBlock1d mid_attn;
    GroupNormLayer norm_out;
    Conv1dLayer conv_out; // -> 2 * z_channels

    Tensorf forward(const Tensorf& x) const; // [B, 2z, M]
    void collect(const std::string& prefix, Params& out);
};

struct VaeDecoder {
    Conv1dLayer conv_in; // z -> top channels
    ResBlock1d mid1, mid2;
    AttnBlock1d mid_attn;
    int extra_ups = 0;              // applied right after the middle block
    std::vector<uint8_t> up_before; // per level in processing order (top first)
    std::vector<ConvT1dLayer> ups;  // in application order
    std::vector<ResBlock1d> blocks; // 2 per level, top level first
    GroupNormLayer norm_out;
    Conv1dLayer conv_out; // -> 3 logits

    Tensorf forward(const Tensorf& z) const;
    void collect(const std::string& prefix, Params& out);
};

// 6-layer spectral-normalized hinge discriminator over one-hot sequences.
struct Discriminator {
    struct Layer {
        Conv1dLayer conv;
        SpectralState sn;
        std::optional<InstanceNormLayer> norm;
    };
    std::vector<Layer> layers;

    static Discriminator make(int hidden, Rng& rng);
    // Per-sample scores [B]; mutates the power-iteration state.
    Tensorf forward(const Tensorf& x);
    void collect(const std::string& prefix, Params& out);
};

struct VaeModel {
    VaeConfig cfg;
    VaeEncoder encoder;
    VaeDecoder decoder;
    Tensorf log_s; // learnable reconstruction log-variance, init 0
    std::optional<Discriminator> disc;

    static VaeModel init(const VaeConfig& cfg, uint64_t seed);
    Params generator_params();
    Params discriminator_params();
    VaeModel clone() const;
};

struct EncodeResult {
    Tensorf mu, logvar, z;
};

// z = mu + exp(logvar/2) * noise; pass a zero tensor to get z == mu.
EncodeResult vae_encode(const VaeModel& m, const Tensorf& x, const Tensorf& noise);
Tensorf vae_decode(const VaeModel& m, const Tensorf& z);

struct VaeLossParts {
    Tensorf total;
    double recon = 0, kl = 0, s = 0, adv = 0;
    double lambda_disc = 0;
};

// Composite objective: recon/exp(s) + s + beta*KL + lambda*adv. `adv` is the
// generator-side hinge term -mean(D(decoded)); pass an undefined tensor when
// the discriminator is inactive.
VaeLossParts vae_loss(const Tensorf& logits, const std::vector<int64_t>& targets,
                      const Tensorf& mu, const Tensorf& logvar, const Tensorf& log_s, double beta,
                      const Tensorf& adv, double lambda_disc);

// Discriminator hinge loss mean(relu(1 - D(real)) + relu(1 + D(fake))).
Tensorf disc_hinge_loss(const Tensorf& d_real, const Tensorf& d_fake);

// ||grad_w recon|| / (||grad_w adv|| + 1e-4) at the final decoder weight,
// clamped to [0, 1e4]. Consumes two backward passes on `tape` and leaves all
// gradients zeroed.
double adaptive_disc_weight(Tapef& tape, const Tensorf& l_recon, const Tensorf& l_adv,
                            const Tensorf& last_decoder_weight, bool& clamped);

struct VaeHistoryRow {
    int epoch = 0;
    double recon = 0, kl = 0, s = 0, lambda_disc = 0, val_acc = 0;
};

struct VaeTrainResult {
    VaeModel model; // EMA weights from the best-validation epoch
    std::vector<VaeHistoryRow> history;
    double best_val_acc = 0;
    bool aborted_nan = false;
};

VaeTrainResult train_vae(const GenotypeMatrix& train, const GenotypeMatrix& val,
                         const VaeConfig& cfg, uint64_t seed);

// VAE encode-decode of the given matrix (sampled z), decoded by argmax.
GenotypeMatrix reconstruct(const VaeModel& m, const GenotypeMatrix& g, uint64_t seed);
double reconstruction_accuracy(const GenotypeMatrix& original, const GenotypeMatrix& recon);

// Sampled posterior latents for the whole matrix: [n, z_channels, latent_len].
Tensorf encode_latents(const VaeModel& m, const GenotypeMatrix& g, uint64_t seed);

void save_vae(const VaeModel& m, const GenotypeMatrix& panel_source, const std::string& path);
struct LoadedVae {
    VaeModel model;
    std::vector<Variant> variants;
    std::vector<std::string> snp_ids;
};
LoadedVae load_vae(const std::string& path);

void write_vae_history(const std::string& path, const std::vector<VaeHistoryRow>& history);

} // namespace snpforge

#endif
