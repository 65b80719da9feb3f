#ifndef SNPFORGE_DIFFUSION_HPP
#define SNPFORGE_DIFFUSION_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "snpforge/genodata.hpp"
#include "snpforge/nn.hpp"
#include "snpforge/vae.hpp"

namespace snpforge {

// Scaled-linear beta schedule: beta_t = (sqrt(bs) + t/(T-1)*(sqrt(be)-sqrt(bs)))^2.
struct NoiseSchedule {
    int t_steps = 1000;
    double beta_start = 0.00085, beta_end = 0.012;
    std::vector<double> beta, alpha, alpha_bar;

    static NoiseSchedule build(int t_steps, double beta_start, double beta_end);
    double sigma(int t) const; // sqrt((1 - abar_t) / abar_t)
};

// z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps, per-sample timesteps.
Tensorf q_sample(const Tensorf& z0, const std::vector<int>& t, const Tensorf& eps,
                 const NoiseSchedule& schedule);

struct LdmConfig {
    int model_channels = 32;
    std::vector<int> mults = {1, 2, 4};
    int res_blocks = 2;
    int head_dim = 32;
    int embed_dim = 32; // class embedding / cross-attention context width
    int norm_groups = 8;
    int t_steps = 1000;
    double beta_start = 0.00085, beta_end = 0.012;
    double p_uncond = 0.2;
    double lr = 3e-4;
    int batch = 128;
    int epochs = 150;
    int warmup_epochs = 5;
    double ema_decay = 0.999;

    static LdmConfig desk();
    static LdmConfig paper();
};

struct ResBlockT {
    GroupNormLayer n1, n2;
    Conv1dLayer c1, c2;
    LinearLayer emb; // time embedding projection, added per channel
    std::optional<Conv1dLayer> skip;

    static ResBlockT make(int in_ch, int out_ch, int temb_dim, int norm_groups, Rng& rng);
    Tensorf forward(const Tensorf& x, const Tensorf& temb) const;
    void collect(const std::string& prefix, Params& out);
};

// Multi-head attention of x [B, M, inner] against a context [B, Lc, ctx_dim].
struct CrossAttention {
    LinearLayer to_q, to_k, to_v, to_out;
    int heads = 1, head_dim = 32;

    static CrossAttention make(int inner, int ctx_dim, int head_dim, Rng& rng);
    Tensorf forward(const Tensorf& x, const Tensorf& ctx) const;
    void collect(const std::string& prefix, Params& out);
};

struct TransformerBlock1d {
    LayerNormLayer ln1, ln2, ln3;
    CrossAttention self_attn, cross_attn;
    LinearLayer ff1, ff2;

    static TransformerBlock1d make(int inner, int ctx_dim, int head_dim, Rng& rng);
    Tensorf forward(const Tensorf& x, const Tensorf& ctx) const;
    void collect(const std::string& prefix, Params& out);
};

struct SpatialTransformer1d {
    GroupNormLayer norm;
    Conv1dLayer proj_in, proj_out;
    TransformerBlock1d block; // depth 1

    static SpatialTransformer1d make(int ch, int ctx_dim, int head_dim, int norm_groups, Rng& rng);
    Tensorf forward(const Tensorf& x, const Tensorf& ctx) const;
    void collect(const std::string& prefix, Params& out);
};

struct UNet1d {
    struct Stage {
        ResBlockT res;
        SpatialTransformer1d attn;
    };
    struct DownLevel {
        std::vector<Stage> stages;
        std::optional<Conv1dLayer> down;
    };
    struct UpLevel {
        std::vector<Stage> stages; // res_blocks + 1, consuming skips
        std::optional<ConvT1dLayer> up;
    };

    LinearLayer time1, time2;
    Conv1dLayer conv_in;
    std::vector<DownLevel> down_levels;
    ResBlockT mid1, mid2;
    SpatialTransformer1d mid_attn;
    std::vector<UpLevel> up_levels;
    GroupNormLayer norm_out;
    Conv1dLayer conv_out;
    int model_channels = 32;

    Tensorf forward(const Tensorf& z, const std::vector<double>& t, const Tensorf& ctx) const;
    void collect(const std::string& prefix, Params& out);
};

// Embedding rows: {class 0, class 1, unconditional token}.
struct ClassEmbedder {
    Tensorf table; // [3, E]
    static constexpr int64_t kUncond = 2;

    static ClassEmbedder make(int embed_dim, Rng& rng);
    Tensorf context(const std::vector<int64_t>& labels) const; // [B, 1, E]
    void collect(const std::string& prefix, Params& out);
};

struct LdmModel {
    LdmConfig cfg;
    NoiseSchedule schedule;
    UNet1d unet;
    ClassEmbedder embedder;
    int z_channels = 4;
    int64_t latent_len = 4;
    float latent_scale = 1.f; // latents are multiplied by this before diffusion
    int64_t train_cases = 0, train_controls = 0;

    static LdmModel init(const LdmConfig& cfg, int z_channels, int64_t latent_len, uint64_t seed);
    Params params();
    LdmModel clone() const;
    // Predicted noise for (z_t, t, labels); labels may include kUncond.
    Tensorf epsilon(const Tensorf& z_t, const std::vector<double>& t,
                    const std::vector<int64_t>& labels) const;
};

// One training-objective evaluation: uniform t, Gaussian eps, label dropout
// with probability p_uncond; returns mean squared error (per element).
// `used_labels`, when given, receives the labels after dropout.
Tensorf ldm_loss(const LdmModel& m, const Tensorf& z0, const std::vector<int64_t>& labels,
                 double p_uncond, Rng& rng, std::vector<int64_t>* used_labels = nullptr);

struct EpsTrace {
    struct Call {
        double t;
        int64_t label;
        uint64_t z_hash;
    };
    std::vector<Call> calls;
};

// Classifier-free guidance eps_u + w * (eps_c - eps_u); w == 1 short-circuits
// to a single conditional call.
Tensorf cfg_epsilon(const LdmModel& m, const Tensorf& z_t, double t, int64_t label, double w,
                    EpsTrace* trace = nullptr);

struct SamplerConfig {
    int steps = 50;
    double guidance = 5.0;
    double rho = 7.0; // step-spacing exponent
    EpsTrace* trace = nullptr;
};

// Deterministic Euler integration over the sigma-parameterized ODE with the
// rho-spaced step schedule; initial latent ~ N(0, sigma_max^2).
Tensorf euler_sample(const LdmModel& m, const SamplerConfig& cfg, int64_t label, int64_t n,
                     uint64_t seed);

// Same integrator over an arbitrary noise predictor; the model path above
// delegates here. eps_fn receives the rescaled latent z_t, the sigma of the
// current step and the matching fractional timestep.
using EpsFn = std::function<Tensorf(const Tensorf& z_t, double sigma, double t)>;
Tensorf euler_integrate(const NoiseSchedule& schedule, const SamplerConfig& cfg, int z_channels,
                        int64_t latent_len, int64_t n, uint64_t seed, const EpsFn& eps_fn);

double ldm_validation_loss(const LdmModel& m, const Tensorf& latents,
                           const std::vector<int64_t>& labels, uint64_t seed);

struct LdmHistoryRow {
    int epoch = 0;
    double lr = 0, train_loss = 0, val_loss = 0;
};

struct LdmTrainResult {
    LdmModel model; // EMA weights from the lowest-validation-loss epoch
    std::vector<LdmHistoryRow> history;
    double best_val_loss = 0;
    bool aborted_nan = false;
};

LdmTrainResult train_ldm(const Tensorf& train_latents, const std::vector<int64_t>& train_labels,
                         const Tensorf& val_latents, const std::vector<int64_t>& val_labels,
                         const LdmConfig& cfg, uint64_t seed);

struct GeneratedCohort {
    GenotypeMatrix genotypes;
    PhenotypeVector phenotype;
};

// Samples `count` latents per class, decodes through the frozen VAE and
// attaches the conditioning labels.
GeneratedCohort generate_cohort(const VaeModel& vae, const LdmModel& ldm,
                                const SamplerConfig& sampler,
                                const std::map<int, int64_t>& class_counts,
                                const std::vector<Variant>& variants,
                                const std::vector<std::string>& snp_ids, uint64_t seed);

// Class-count presets from the training composition stored in the model.
std::map<int, int64_t> matched_counts(const LdmModel& m);
std::map<int, int64_t> augmented_counts(const LdmModel& m); // balanced, 2 x n_controls

void save_ldm(const LdmModel& m, const std::string& path);
LdmModel load_ldm(const std::string& path);

void write_ldm_history(const std::string& path, const std::vector<LdmHistoryRow>& history);

// Latents container for the train-ldm CLI handoff.
struct LatentDataset {
    Tensorf train_latents, val_latents;
    std::vector<int64_t> train_labels, val_labels;
};
void save_latents(const LatentDataset& d, const std::string& path);
LatentDataset load_latents(const std::string& path);

} // namespace snpforge

#endif
