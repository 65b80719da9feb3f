#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "snpforge/assoc.hpp"
#include "snpforge/ldstats.hpp"
#include "snpforge/simgen.hpp"

using namespace snpforge;

namespace {

double median(std::vector<double> v) {
    REQUIRE(!v.empty());
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> within_block_r2(const GenotypeMatrix& g, int blocks) {
    const auto m = pairwise_r2(g);
    std::vector<double> out;
    const int64_t per = g.l() / blocks;
    for (int64_t j = 0; j < g.l(); ++j)
        for (int64_t k = j + 1; k < g.l(); ++k) {
            if (j / per != k / per) continue;
            if (m.is_defined(j, k)) out.push_back(m.at(j, k));
        }
    return out;
}

// Asymptotic Kolmogorov-Smirnov survival function.
double ks_pvalue(double d, size_t n) {
    const double x = (std::sqrt(static_cast<double>(n)) + 0.12 + 0.11 / std::sqrt(static_cast<double>(n))) * d;
    double p = 0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
    return std::clamp(p, 0.0, 1.0);
}

} // namespace

TEST_CASE("simulated matrix has the requested shape and dosage alphabet") {
    GenoSimConfig cfg;
    cfg.n = 100;
    cfg.l = 64;
    auto g = simulate_genotypes(cfg, 1);
    CHECK(g.n() == 100);
    CHECK(g.l() == 64);
    for (int64_t i = 0; i < g.n(); ++i)
        for (int64_t j = 0; j < g.l(); ++j) CHECK(g.dosage(i, j) <= 2);
}

TEST_CASE("identical seed reproduces the matrix exactly") {
    GenoSimConfig cfg;
    cfg.n = 80;
    cfg.l = 32;
    auto a = simulate_genotypes(cfg, 99);
    auto b = simulate_genotypes(cfg, 99);
    CHECK(a.packed() == b.packed());
    auto c = simulate_genotypes(cfg, 100);
    CHECK(a.packed() != c.packed());
}

TEST_CASE("no recombination with two founders gives strong within-block LD") {
    GenoSimConfig cfg;
    cfg.n = 1000;
    cfg.l = 64;
    cfg.blocks = 8;
    cfg.founders = 2;
    cfg.recomb = 0.0;
    auto g = simulate_genotypes(cfg, 5);
    CHECK(median(within_block_r2(g, cfg.blocks)) > 0.5);
}

TEST_CASE("full recombination is indistinguishable from independent sampling") {
    GenoSimConfig cfg;
    cfg.n = 1000;
    cfg.l = 64;
    cfg.blocks = 8;
    cfg.founders = 8;
    cfg.recomb = 1.0;
    auto g = simulate_genotypes(cfg, 6);
    // adjacent-SNP r^2 only
    const auto m = pairwise_r2(g);
    std::vector<double> adj;
    for (int64_t j = 0; j + 1 < g.l(); ++j)
        if (m.is_defined(j, j + 1)) adj.push_back(m.at(j, j + 1));
    CHECK(median(adj) < 0.05);
}

TEST_CASE("per-SNP MAFs track the sampled target range") {
    GenoSimConfig cfg;
    cfg.n = 2000;
    cfg.l = 128;
    cfg.founders = 16;
    cfg.maf_lo = 0.15;
    cfg.maf_hi = 0.45;
    auto g = simulate_genotypes(cfg, 7);
    const auto f = maf(g);
    int64_t inside = 0;
    for (const auto v : f) inside += v >= cfg.maf_lo - 0.08 && v <= 0.5;
    CHECK(static_cast<double>(inside) / static_cast<double>(f.size()) > 0.95);
}

TEST_CASE("infeasible maf range is rejected") {
    GenoSimConfig cfg;
    cfg.maf_lo = 0.6;
    cfg.maf_hi = 0.7;
    CHECK_THROWS_AS(simulate_genotypes(cfg, 1), std::invalid_argument);
}

TEST_CASE("intercept-only model calibrates to logit of the target") {
    GenoSimConfig cfg;
    cfg.n = 10000;
    cfg.l = 16;
    auto g = simulate_genotypes(cfg, 8);
    EffectArchitecture proto;
    proto.mixture_means = {0.0, 0.0, 0.0};
    proto.mixture_vars = {0.0, 0.0, 0.0};
    proto.zero_fraction = 1.0;
    proto.noise_std = 0.0;
    auto sim = simulate_phenotype(g, proto, 0.3, 21);
    CHECK(sim.arch.intercept == doctest::Approx(std::log(0.3 / 0.7)).epsilon(0.05));
    CHECK(std::abs(sim.achieved_prevalence - 0.3) < 0.02);
}

TEST_CASE("prevalence calibration holds within 0.03 across seeds at n=10000") {
    GenoSimConfig cfg;
    cfg.n = 10000;
    cfg.l = 32;
    auto g = simulate_genotypes(cfg, 9);
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        auto sim = simulate_phenotype(g, EffectArchitecture{}, 0.3, seed);
        CHECK(std::abs(sim.achieved_prevalence - 0.3) < 0.03);
        CHECK(std::abs(sim.expected_prevalence - 0.3) < 0.005);
    }
}

TEST_CASE("effect-free SNPs carry no association") {
    GenoSimConfig cfg;
    cfg.n = 6000;
    cfg.l = 256;
    cfg.recomb = 1.0; // independent SNPs isolate the marginal effects
    cfg.founders = 16;
    auto g = simulate_genotypes(cfg, 10);
    EffectArchitecture proto;
    proto.zero_fraction = 0.05;
    auto sim = simulate_phenotype(g, proto, 0.3, 11);
    PhenotypeVector y = sim.phenotype;
    const auto gw = gwas_univariate(g, y);

    std::vector<double> zero_abs, causal_abs, zero_p;
    for (int64_t j = 0; j < g.l(); ++j) {
        const auto ju = static_cast<size_t>(j);
        if (sim.arch.betas[ju] == 0.0) {
            zero_abs.push_back(std::abs(gw.rows[ju].beta));
            zero_p.push_back(gw.rows[ju].p);
        } else if (std::abs(sim.arch.betas[ju]) > 1.0) {
            causal_abs.push_back(std::abs(gw.rows[ju].beta));
        }
    }
    REQUIRE(!zero_abs.empty());
    REQUIRE(!causal_abs.empty());
    CHECK(median(zero_abs) < median(causal_abs));

    // Zero-effect p-values should look uniform (KS test).
    std::sort(zero_p.begin(), zero_p.end());
    double d = 0;
    const auto n = static_cast<double>(zero_p.size());
    for (size_t i = 0; i < zero_p.size(); ++i) {
        d = std::max(d, std::abs(zero_p[i] - static_cast<double>(i + 1) / n));
        d = std::max(d, std::abs(zero_p[i] - static_cast<double>(i) / n));
    }
    CHECK(ks_pvalue(d, zero_p.size()) > 0.01);
}

TEST_CASE("effects tsv round trip") {
    GenoSimConfig cfg;
    cfg.n = 50;
    cfg.l = 16;
    auto g = simulate_genotypes(cfg, 12);
    auto sim = simulate_phenotype(g, EffectArchitecture{}, 0.3, 13);
    write_effects_tsv("simgen_effects_test.tsv", g, sim.arch);
    const auto betas = read_effects_tsv("simgen_effects_test.tsv");
    REQUIRE(betas.size() == sim.arch.betas.size());
    for (size_t j = 0; j < betas.size(); ++j)
        CHECK(betas[j] == doctest::Approx(sim.arch.betas[j]));
    std::remove("simgen_effects_test.tsv");
}
