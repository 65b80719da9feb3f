#ifndef SNPFORGE_PRIVACY_HPP
#define SNPFORGE_PRIVACY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "snpforge/genodata.hpp"

namespace snpforge {

// Per-query nearest and second-nearest one-hot Hamming distances (twice the
// dosage mismatch count) against a reference set, plus the nearest index.
struct NnResult {
    std::vector<int64_t> d1, d2, idx1;
};

NnResult hamming_nn(const GenotypeMatrix& queries, const GenotypeMatrix& references,
                    int workers = 1);

// Percent of synthetic samples that exactly match a training sample.
double imr(const GenotypeMatrix& synthetic, const GenotypeMatrix& train);

// Mean d1/d2 over synthetic samples; pairs with d2 == 0 contribute 1.0.
double nndr(const GenotypeMatrix& synthetic, const GenotypeMatrix& train);

// AUC of the distance-to-synthetic membership attack (train = positives).
double mi_auc(const GenotypeMatrix& train, const GenotypeMatrix& holdout,
              const GenotypeMatrix& synthetic);

// Percent of synthetic samples whose nearest training distance falls below
// the given percentile (linear interpolation) of holdout-to-train distances.
double dcr(const GenotypeMatrix& synthetic, const GenotypeMatrix& train,
           const GenotypeMatrix& holdout, double percentile = 5.0);

// Nearest-neighbour adversarial accuracy with leave-one-out within-set
// distances; both sets capped at `cap` samples via seeded subsampling.
double nnaa(const GenotypeMatrix& train, const GenotypeMatrix& synthetic, uint64_t seed,
            int64_t cap = 50000);

// Pearson correlation of per-SNP minor allele frequencies.
double maf_corr(const GenotypeMatrix& real, const GenotypeMatrix& generated);

struct PrivacyRow {
    std::string condition;
    std::string scope; // "overall", "controls", "cases"
    double imr_pct = 0, nndr = 0, mi_auc = 0, dcr_pct = 0, nnaa = 0, maf_r = 0;
};

struct PrivacyInputs {
    const GenotypeMatrix& train;
    const GenotypeMatrix& holdout;
    const GenotypeMatrix& synthetic;
};

PrivacyRow privacy_overall(const PrivacyInputs& in, const std::string& condition, uint64_t seed);

// Class-stratified rows: every metric recomputed on same-class subsets only.
std::vector<PrivacyRow> privacy_report(const PrivacyInputs& in, const std::string& condition,
                                       bool per_class, const PhenotypeVector& train_y,
                                       const PhenotypeVector& holdout_y,
                                       const PhenotypeVector& synthetic_y, uint64_t seed);

void write_privacy_tsv(const std::string& path, const std::vector<PrivacyRow>& rows);

} // namespace snpforge

#endif
