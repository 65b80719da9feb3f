#include "snpforge/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace snpforge {

namespace {

std::string zero_padded(const char* prefix, int64_t i) {
    std::ostringstream os;
    os << prefix;
    std::string num = std::to_string(i);
    for (size_t k = num.size(); k < 5; ++k) os << '0';
    os << num;
    return os.str();
}

double sigmoid_d(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace

GenotypeMatrix simulate_genotypes(const GenoSimConfig& cfg, uint64_t seed) {
    return simulate_genotypes(cfg, seed, derive_seed(seed, "default_cohort"));
}

GenotypeMatrix simulate_genotypes(const GenoSimConfig& cfg, uint64_t population_seed,
                                  uint64_t cohort_seed) {
    if (cfg.founders < 2) throw std::invalid_argument("simulate_genotypes: founders must be >= 2");
    if (cfg.recomb < 0 || cfg.recomb > 1)
        throw std::invalid_argument("simulate_genotypes: recomb must lie in [0,1]");
    if (!(cfg.maf_lo > 0 && cfg.maf_lo <= cfg.maf_hi && cfg.maf_hi <= 0.5))
        throw std::invalid_argument("simulate_genotypes: maf range must satisfy 0 < lo <= hi <= 0.5");
    if (cfg.blocks < 1 || cfg.blocks > cfg.l)
        throw std::invalid_argument("simulate_genotypes: invalid block count");

    Rng rng(derive_seed(population_seed, "simulate_population"));
    Rng crng(derive_seed(cohort_seed, "simulate_cohort"));
    const int64_t L = cfg.l;
    const int K = cfg.founders;

    // Near-equal block boundaries partitioning [0, L).
    std::vector<int64_t> block_of(static_cast<size_t>(L));
    std::vector<int64_t> block_start;
    for (int64_t j = 0; j < L; ++j) {
        const auto b = static_cast<int64_t>(j * cfg.blocks / L);
        block_of[static_cast<size_t>(j)] = b;
        if (block_start.size() <= static_cast<size_t>(b)) block_start.push_back(j);
    }

    // Founder haplotypes: at each SNP, round(f*K) founders carry the alt
    // allele (clamped to keep every SNP polymorphic among founders), so the
    // population allele frequency tracks the sampled target f.
    std::vector<uint8_t> founder(static_cast<size_t>(K * L), 0);
    for (int64_t j = 0; j < L; ++j) {
        const double f = rng.uniform(cfg.maf_lo, cfg.maf_hi);
        auto carriers = static_cast<int>(std::llround(f * K));
        carriers = std::clamp(carriers, 1, K - 1);
        const auto which = rng.sample_without_replacement(K, carriers);
        for (const auto k : which) founder[static_cast<size_t>(k * L + j)] = 1;
    }

    std::vector<uint8_t> dosages(static_cast<size_t>(cfg.n * L), 0);
    for (int64_t i = 0; i < cfg.n; ++i) {
        for (int hap = 0; hap < 2; ++hap) {
            int cur = -1;
            for (int64_t j = 0; j < L; ++j) {
                const bool new_block =
                    j == 0 || block_of[static_cast<size_t>(j)] != block_of[static_cast<size_t>(j - 1)];
                if (new_block || crng.uniform() < cfg.recomb)
                    cur = static_cast<int>(crng.below(static_cast<uint64_t>(K)));
                dosages[static_cast<size_t>(i * L + j)] +=
                    founder[static_cast<size_t>(cur * L + j)];
            }
        }
    }

    std::vector<Variant> variants(static_cast<size_t>(L));
    uint64_t pos = 10000;
    for (int64_t j = 0; j < L; ++j) {
        pos += cfg.spacing_lo +
               rng.below(std::max<uint64_t>(1, cfg.spacing_hi - cfg.spacing_lo + 1));
        variants[static_cast<size_t>(j)] = Variant{1, pos, 'A', 'G'};
    }

    std::vector<std::string> sample_ids, snp_ids;
    sample_ids.reserve(static_cast<size_t>(cfg.n));
    for (int64_t i = 0; i < cfg.n; ++i) sample_ids.push_back(zero_padded("ind", i));
    snp_ids.reserve(static_cast<size_t>(L));
    for (int64_t j = 0; j < L; ++j) snp_ids.push_back(zero_padded("snp", j));

    return GenotypeMatrix(cfg.n, L, dosages, std::move(variants), std::move(sample_ids), {},
                          std::move(snp_ids));
}

SimulatedPhenotype simulate_phenotype(const GenotypeMatrix& g, const EffectArchitecture& proto,
                                      double target_prevalence, uint64_t seed) {
    if (!(target_prevalence > 0 && target_prevalence < 1))
        throw std::invalid_argument("simulate_phenotype: target prevalence must lie in (0,1)");
    const double wsum =
        proto.mixture_weights[0] + proto.mixture_weights[1] + proto.mixture_weights[2];
    if (std::abs(wsum - 1.0) > 1e-9)
        throw std::invalid_argument("simulate_phenotype: mixture weights must sum to 1");

    Rng rng(derive_seed(seed, "simulate_phenotype"));
    const int64_t n = g.n(), L = g.l();

    EffectArchitecture arch = proto;
    arch.betas.assign(static_cast<size_t>(L), 0.0);
    for (int64_t j = 0; j < L; ++j) {
        const double u = rng.uniform();
        int comp = u < proto.mixture_weights[0] ? 0
                   : u < proto.mixture_weights[0] + proto.mixture_weights[1] ? 1
                                                                             : 2;
        arch.betas[static_cast<size_t>(j)] =
            proto.mixture_means[static_cast<size_t>(comp)] +
            std::sqrt(proto.mixture_vars[static_cast<size_t>(comp)]) * rng.normal();
    }
    const auto n_zero = static_cast<int64_t>(std::llround(proto.zero_fraction * static_cast<double>(L)));
    for (const auto j : rng.sample_without_replacement(L, n_zero))
        arch.betas[static_cast<size_t>(j)] = 0.0;

    arch.col_mean.assign(static_cast<size_t>(L), 0.0);
    arch.col_std.assign(static_cast<size_t>(L), 1.0);
    if (arch.standardize) {
        for (int64_t j = 0; j < L; ++j) {
            double s = 0, s2 = 0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = g.dosage(i, j);
                s += d;
                s2 += d * d;
            }
            const double m = s / static_cast<double>(n);
            const double var = s2 / static_cast<double>(n) - m * m;
            arch.col_mean[static_cast<size_t>(j)] = m;
            arch.col_std[static_cast<size_t>(j)] = var > 1e-12 ? std::sqrt(var) : 1.0;
        }
    }

    std::vector<double> liability(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < L; ++j) {
            const auto ju = static_cast<size_t>(j);
            const double x = (g.dosage(i, j) - arch.col_mean[ju]) / arch.col_std[ju];
            acc += arch.betas[ju] * x;
        }
        liability[static_cast<size_t>(i)] = acc + arch.noise_std * rng.normal();
    }

    const auto expected_prev = [&](double b0) {
        double acc = 0;
        for (const auto l : liability) acc += sigmoid_d(b0 + l);
        return acc / static_cast<double>(n);
    };

    double lo = -100, hi = 100;
    while (expected_prev(lo) > target_prevalence) lo *= 2;
    while (expected_prev(hi) < target_prevalence) hi *= 2;
    double mid = 0, achieved_expected = 0;
    bool converged = false;
    for (int it = 0; it < 200; ++it) {
        mid = 0.5 * (lo + hi);
        achieved_expected = expected_prev(mid);
        if (std::abs(achieved_expected - target_prevalence) < 0.005) {
            converged = true;
            break;
        }
        if (achieved_expected < target_prevalence)
            lo = mid;
        else
            hi = mid;
    }
    if (!converged)
        throw std::runtime_error(
            "simulate_phenotype: prevalence calibration did not converge in 200 iterations");
    arch.intercept = mid;

    SimulatedPhenotype out;
    out.arch = std::move(arch);
    out.expected_prevalence = achieved_expected;
    out.phenotype.trait = "simulated";
    out.phenotype.labels.resize(static_cast<size_t>(n));
    int64_t cases = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double p = sigmoid_d(out.arch.intercept + liability[static_cast<size_t>(i)]);
        const uint8_t label = rng.uniform() < p ? 1 : 0;
        out.phenotype.labels[static_cast<size_t>(i)] = label;
        cases += label;
    }
    out.achieved_prevalence = static_cast<double>(cases) / static_cast<double>(n);
    if (cases == 0 || cases == n)
        throw std::runtime_error("simulate_phenotype: degenerate cohort with a single class");
    return out;
}

void write_effects_tsv(const std::string& path, const GenotypeMatrix& g,
                       const EffectArchitecture& arch) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("effects: cannot open '" + path + "' for writing");
    os << "snp_id\ttrue_beta\n";
    os.precision(17);
    for (int64_t j = 0; j < g.l(); ++j) {
        const auto ju = static_cast<size_t>(j);
        const std::string id = g.snp_ids().empty() ? "snp" + std::to_string(j) : g.snp_ids()[ju];
        os << id << "\t" << arch.betas[ju] << "\n";
    }
}

std::vector<double> read_effects_tsv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("effects: cannot open '" + path + "'");
    std::vector<double> betas;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("effects: malformed line: " + line);
        betas.push_back(std::stod(line.substr(tab + 1)));
    }
    return betas;
}

} // namespace snpforge
