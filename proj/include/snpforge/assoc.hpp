#ifndef SNPFORGE_ASSOC_HPP
#define SNPFORGE_ASSOC_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "snpforge/genodata.hpp"

namespace snpforge {

enum class GwasFlag : uint8_t { ok = 0, monomorphic = 1, separation = 2 };

struct GwasRow {
    std::string snp_id;
    uint8_t chrom = 0;
    uint64_t pos = 0;
    double beta = 0, se = 0, p = 1;
    GwasFlag flag = GwasFlag::ok;
};

struct GwasSummary {
    std::vector<GwasRow> rows;
};

// Per-SNP univariate logistic fit logit P(y=1) = a + b*dosage by IRLS
// (deviance tolerance 1e-8, max 25 iterations). Monomorphic SNPs get
// beta=0/p=1; separation caps |beta| at 10 and flags the row.
GwasSummary gwas_univariate(const GenotypeMatrix& g, const PhenotypeVector& y);

struct SnpPanel {
    std::vector<int64_t> indices; // ordered by ascending p
    uint64_t window_bp = 0;
    double r2_threshold = 1.0;
};

// Greedy clumping: iterate by ascending p (ties by ascending index); drop a
// SNP if a retained same-chromosome SNP within window_bp has dosage-r^2
// above the threshold with it.
SnpPanel ld_clump(const GwasSummary& summary, const GenotypeMatrix& g, uint64_t window_bp,
                  double r2_threshold);

SnpPanel select_top_l(const SnpPanel& panel, int64_t l_target);

std::vector<double> prs_score(const GenotypeMatrix& g, std::span<const double> betas,
                              const SnpPanel& panel);

// PRS with fixed external betas; flipped when Spearman(PRS, y) < 0.
std::vector<double> external_prs(const GenotypeMatrix& g, std::span<const double> betas,
                                 const SnpPanel& panel, const PhenotypeVector& y);

// Mann-Whitney AUC; ties contribute 1/2. Throws when only one class present.
double roc_auc(std::span<const double> scores, std::span<const uint8_t> labels);

struct RidgeModel {
    std::vector<double> coef; // aligned to the panel
    double intercept = 0;
    int iterations = 0;
};

// Multivariate L2-regularized logistic regression on panel dosages (penalty
// excludes the intercept); objective tolerance 1e-6, max 100 iterations.
RidgeModel logistic_ridge_fit(const GenotypeMatrix& g, const SnpPanel& panel,
                              const PhenotypeVector& y, double lambda);
std::vector<double> ridge_scores(const RidgeModel& model, const GenotypeMatrix& g,
                                 const SnpPanel& panel);

void write_gwas_tsv(const std::string& path, const GwasSummary& s);
GwasSummary read_gwas_tsv(const std::string& path);
void write_panel(const std::string& path, const SnpPanel& panel, const GenotypeMatrix& g);
SnpPanel read_panel(const std::string& path, const GenotypeMatrix& g);

} // namespace snpforge

#endif
