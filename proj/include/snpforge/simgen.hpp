#ifndef SNPFORGE_SIMGEN_HPP
#define SNPFORGE_SIMGEN_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "snpforge/genodata.hpp"

namespace snpforge {

// Block-LD genotype simulator: founder haplotypes per block, copied with a
// per-SNP founder-switch probability, summed into diploid dosages.
struct GenoSimConfig {
    int64_t n = 1000;
    int64_t l = 64;
    int blocks = 8;
    int founders = 12; // >= 2
    double recomb = 0.05;
    double maf_lo = 0.1;
    double maf_hi = 0.5;
    uint64_t spacing_lo = 1000; // bp between adjacent SNPs
    uint64_t spacing_hi = 10000;
};

GenotypeMatrix simulate_genotypes(const GenoSimConfig& cfg, uint64_t seed);

// Same founder pool and variant positions (population_seed), fresh
// individuals (cohort_seed) — for drawing exchangeable cohorts from one
// simulated population.
GenotypeMatrix simulate_genotypes(const GenoSimConfig& cfg, uint64_t population_seed,
                                  uint64_t cohort_seed);

struct EffectArchitecture {
    std::array<double, 3> mixture_weights{0.3, 0.5, 0.2};
    std::array<double, 3> mixture_means{0.8, 2.5, 0.0};
    std::array<double, 3> mixture_vars{0.2, 0.4, 0.1};
    double zero_fraction = 0.05;
    double noise_std = 1.0;
    bool standardize = true; // standardize dosage columns before the liability term
    double intercept = 0.0;  // calibrated by simulate_phenotype
    std::vector<double> betas;
    std::vector<double> col_mean, col_std; // standardization parameters used
};

struct SimulatedPhenotype {
    PhenotypeVector phenotype;
    EffectArchitecture arch;
    double expected_prevalence = 0.0; // mean of the calibrated case probabilities
    double achieved_prevalence = 0.0; // realized case fraction
};

// Liability model p_i = sigmoid(b0 + x_i . beta + eps_i); betas from the
// three-component Gaussian mixture with a zeroed fraction, b0 calibrated by
// bisection so the expected prevalence matches the target within 0.005.
SimulatedPhenotype simulate_phenotype(const GenotypeMatrix& g, const EffectArchitecture& proto,
                                      double target_prevalence, uint64_t seed);

void write_effects_tsv(const std::string& path, const GenotypeMatrix& g,
                       const EffectArchitecture& arch);
std::vector<double> read_effects_tsv(const std::string& path);

} // namespace snpforge

#endif
