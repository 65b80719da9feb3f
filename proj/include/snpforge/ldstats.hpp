#ifndef SNPFORGE_LDSTATS_HPP
#define SNPFORGE_LDSTATS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "snpforge/genodata.hpp"

namespace snpforge {

// Symmetric r^2 matrix; entries involving monomorphic SNPs are undefined.
struct R2Matrix {
    int64_t l = 0;
    std::vector<double> r2;      // l*l, row-major
    std::vector<uint8_t> defined;

    double at(int64_t j, int64_t k) const { return r2[static_cast<size_t>(j * l + k)]; }
    bool is_defined(int64_t j, int64_t k) const {
        return defined[static_cast<size_t>(j * l + k)] != 0;
    }
};

R2Matrix pairwise_r2(const GenotypeMatrix& g);
R2Matrix pairwise_r2(const GenotypeMatrix& g, int64_t snp_begin, int64_t snp_end);

struct LdDecayBin {
    double lo = 0, hi = 0;
    double mean_r2 = 0, sem = 0;
    int64_t count = 0;
};

struct LdDecayCurve {
    std::vector<LdDecayBin> bins;     // retained bins (count >= min_pairs)
    std::vector<LdDecayBin> all_bins; // all bins, for bookkeeping
    double spearman_rho = 0;          // rank corr of log10(distance) vs r^2 over valid pairs
    double same_chrom_fraction = 0;
    double missing_r2_fraction = 0; // undefined r^2 among same-chromosome pairs
    int64_t valid_pairs = 0;
};

// Same-chromosome pairs only, 50 log-spaced distance bins by default; bins
// with fewer than min_pairs pairs are dropped from `bins`.
LdDecayCurve ld_decay(const GenotypeMatrix& g, int num_bins = 50, int64_t min_pairs = 50);

// Pearson correlation of average ranks (ties averaged).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Binary f32 grid (undefined entries stored as NaN) and decay-curve TSV.
void write_r2_grid(const std::string& path, const R2Matrix& m);
void write_decay_tsv(const std::string& path, const LdDecayCurve& c);

} // namespace snpforge

#endif
