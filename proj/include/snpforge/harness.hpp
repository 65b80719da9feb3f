#ifndef SNPFORGE_HARNESS_HPP
#define SNPFORGE_HARNESS_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "snpforge/assoc.hpp"
#include "snpforge/diffusion.hpp"
#include "snpforge/genodata.hpp"
#include "snpforge/ldstats.hpp"
#include "snpforge/privacy.hpp"
#include "snpforge/simgen.hpp"
#include "snpforge/vae.hpp"

namespace snpforge {

// ---- TSTR -------------------------------------------------------------------

struct TstrRow {
    std::string condition, predictor;
    double mean_auc = 0, ci95 = 0;
    std::vector<double> fold_aucs;
};

struct TstrConfig {
    std::vector<std::string> conditions{"real", "reconstructed", "synthetic_matched",
                                        "synthetic_augmented"};
    std::vector<std::string> predictors{"prs_univariate", "logistic_ridge", "external_prs"};
    int folds = 5;
    double ridge_lambda = 1.0;
    uint64_t seed = 0;
};

// Fold id per sample; stratified by label, deterministic in (labels, seed).
std::vector<int> stratified_kfold(const std::vector<uint8_t>& labels, int k, uint64_t seed);

struct ConditionData {
    std::string name;
    GenotypeMatrix genotypes;
    PhenotypeVector phenotype;
};

// Train each predictor per condition on k-1 folds, always evaluating on the
// same held-out real test set; CI = 1.96 * sd / sqrt(folds).
std::vector<TstrRow> run_tstr(const std::vector<ConditionData>& conditions,
                              const GenotypeMatrix& test_g, const PhenotypeVector& test_y,
                              std::span<const double> external_betas, const TstrConfig& cfg);

// ---- augmentation subsampling -------------------------------------------------

std::vector<int64_t> subsample_random(int64_t pool_size, double fraction, uint64_t seed);

// Per class: rank by leave-one-out nearest same-class Hamming distance,
// descending (ties by ascending index), keep round(fraction * class size).
std::vector<int64_t> subsample_diversity(const GenotypeMatrix& pool,
                                         const PhenotypeVector& labels, double fraction);

std::vector<int64_t> subsample_pca_stratified(const GenotypeMatrix& pool,
                                              const PhenotypeVector& pool_labels,
                                              const GenotypeMatrix& real_train, double fraction,
                                              int k, int components, uint64_t seed);

struct PcaResult {
    std::vector<double> mean;                    // per SNP
    std::vector<std::vector<double>> components; // components[c] has length L
};

// Iterated power method with deflation on the centered dosage matrix.
PcaResult pca_power(const GenotypeMatrix& g, int components, uint64_t seed, int iters = 100);
std::vector<std::vector<double>> pca_project(const GenotypeMatrix& g, const PcaResult& pca);

struct KmeansResult {
    std::vector<std::vector<double>> centroids;
    std::vector<int> assignment;
};

// k-means++ init, Lloyd iterations, deterministic per seed.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, uint64_t seed,
                    int iters = 50);
int nearest_centroid(const std::vector<double>& p,
                     const std::vector<std::vector<double>>& centroids);

// ---- beta correlation ------------------------------------------------------------

struct BetaCorrelation {
    double r_recon = 0, r_synth = 0;
    int64_t n_recon = 0, n_synth = 0;
};

// Pearson r between per-SNP GWAS betas; separation-flagged SNPs are excluded
// pairwise.
BetaCorrelation beta_correlation(const GwasSummary& real, const GwasSummary& recon,
                                 const GwasSummary& synth);
double beta_pearson(const GwasSummary& a, const GwasSummary& b, int64_t* n_used = nullptr);

// ---- report ------------------------------------------------------------------------

struct LdSection {
    std::string condition;
    LdDecayCurve curve;
};

nlohmann::json assemble_report(const std::vector<TstrRow>& tstr,
                               const std::vector<PrivacyRow>& privacy,
                               const std::vector<LdSection>& ld,
                               const std::optional<BetaCorrelation>& betas);

void write_tstr_tsv(const std::string& path, const std::vector<TstrRow>& rows);
void write_betas_tsv(const std::string& path, const GwasSummary& real, const GwasSummary& recon,
                     const GwasSummary& synth);

// ---- full pipeline -------------------------------------------------------------------

struct EvalConfig {
    uint64_t seed = 7;
    std::string out_dir = "out";
    bool deterministic = false;
    int workers = 1;

    GenoSimConfig sim;
    double prevalence = 0.3;
    EffectArchitecture arch;
    std::array<double, 3> fractions{0.7, 0.2, 0.1};

    bool do_select = false;
    uint64_t window_bp = 10000;
    double r2_threshold = 0.5;
    int64_t top_l = 0; // 0 = keep all

    std::string vae_preset = "desk";
    int vae_epochs = -1; // -1 = preset default
    std::string ldm_preset = "desk";
    int ldm_epochs = -1;

    int sample_steps = 50;
    double guidance = 5.0;

    TstrConfig tstr;
    bool privacy_per_class = true;
};

EvalConfig parse_eval_config(const std::string& path);
void write_resolved_config(const EvalConfig& cfg, const std::string& path);

struct EvalArtifacts {
    nlohmann::json report;
    GenotypeMatrix train_g, val_g, test_g;
    PhenotypeVector train_y, val_y, test_y;
    GenotypeMatrix recon_g;
    GeneratedCohort matched, augmented;
    EffectArchitecture arch;
    VaeModel vae;
    LdmModel ldm;
    std::vector<TstrRow> tstr;
    BetaCorrelation betas;
    std::vector<PrivacyRow> privacy;
    double recon_accuracy = 0;
};

// Runs the whole desk pipeline (simulate, split, train both stages, generate,
// evaluate) and, when out_dir is nonempty, writes report.json and the TSV
// tables there.
EvalArtifacts run_full_evaluation(const EvalConfig& cfg);

} // namespace snpforge

#endif
