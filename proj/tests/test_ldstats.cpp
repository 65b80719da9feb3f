#include <doctest.h>

#include <cmath>
#include <numeric>

#include "snpforge/ldstats.hpp"
#include "snpforge/simgen.hpp"

using namespace snpforge;

namespace {

GenotypeMatrix with_variants(const std::vector<uint8_t>& dosages, int64_t n, int64_t l,
                             std::vector<Variant> vars) {
    return GenotypeMatrix(n, l, dosages, std::move(vars));
}

std::vector<Variant> chrom1(int64_t l, uint64_t step = 1000) {
    std::vector<Variant> v(static_cast<size_t>(l));
    for (int64_t j = 0; j < l; ++j) v[static_cast<size_t>(j)] = {1, 1000 + step * static_cast<uint64_t>(j), 'A', 'G'};
    return v;
}

} // namespace

TEST_CASE("diagonal is one for polymorphic SNPs, duplicated columns hit r2 = 1") {
    // columns: [0,1,2,1], identical copy, constant
    auto g = with_variants({0, 0, 1, 1, 1, 1, 2, 2, 1, 1, 1, 1}, 4, 3, chrom1(3));
    const auto m = pairwise_r2(g);
    CHECK(m.is_defined(0, 0));
    CHECK(m.at(0, 0) == doctest::Approx(1.0));
    CHECK(m.is_defined(0, 1));
    CHECK(m.at(0, 1) == doctest::Approx(1.0));
    CHECK_FALSE(m.is_defined(0, 2));
    CHECK_FALSE(m.is_defined(2, 2));
}

TEST_CASE("4-sample hand case matches a scalar correlation oracle") {
    const std::vector<uint8_t> a{0, 1, 2, 1};
    const std::vector<uint8_t> b{1, 1, 2, 0};
    std::vector<uint8_t> dosages;
    for (int i = 0; i < 4; ++i) {
        dosages.push_back(a[static_cast<size_t>(i)]);
        dosages.push_back(b[static_cast<size_t>(i)]);
    }
    auto g = with_variants(dosages, 4, 2, chrom1(2));
    const auto m = pairwise_r2(g);
    const std::vector<double> ad(a.begin(), a.end());
    const std::vector<double> bd(b.begin(), b.end());
    const double r = pearson(ad, bd);
    CHECK(m.at(0, 1) == doctest::Approx(r * r).epsilon(1e-12));
    CHECK(m.at(1, 0) == doctest::Approx(m.at(0, 1)));
}

TEST_CASE("matrix is symmetric with entries in [0,1]") {
    GenoSimConfig cfg;
    cfg.n = 200;
    cfg.l = 24;
    auto g = simulate_genotypes(cfg, 61);
    const auto m = pairwise_r2(g);
    for (int64_t j = 0; j < m.l; ++j)
        for (int64_t k = 0; k < m.l; ++k) {
            CHECK(m.is_defined(j, k) == m.is_defined(k, j));
            if (!m.is_defined(j, k)) continue;
            CHECK(m.at(j, k) == doctest::Approx(m.at(k, j)));
            CHECK(m.at(j, k) >= -1e-12);
            CHECK(m.at(j, k) <= 1.0 + 1e-12);
        }
}

TEST_CASE("spearman endpoints and tie handling") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {5, 4, 3, 2}) == doctest::Approx(-1.0));

    // tie-heavy 6-point case against an exhaustive rank oracle
    const std::vector<double> x{1, 1, 2, 3, 3, 3};
    const std::vector<double> y{2, 1, 1, 5, 5, 4};
    const std::vector<double> rx{1.5, 1.5, 3, 5, 5, 5};
    const std::vector<double> ry{3, 1.5, 1.5, 5.5, 5.5, 4};
    CHECK(spearman(x, y) == doctest::Approx(pearson(rx, ry)));
}

TEST_CASE("block-simulated data decays with distance") {
    GenoSimConfig cfg;
    cfg.n = 800;
    cfg.l = 64;
    cfg.blocks = 8;
    cfg.recomb = 0.05;
    auto g = simulate_genotypes(cfg, 62);
    const auto c = ld_decay(g, 50, 10);
    CHECK(c.spearman_rho < 0);
    CHECK(c.same_chrom_fraction == doctest::Approx(1.0));
}

TEST_CASE("independent columns give a flat curve near the null correlation level") {
    GenoSimConfig cfg;
    cfg.n = 400;
    cfg.l = 64;
    cfg.recomb = 1.0;
    cfg.founders = 16;
    auto g = simulate_genotypes(cfg, 63);
    const auto c = ld_decay(g, 10, 20);
    const double null_level = 1.0 / static_cast<double>(g.n() - 1);
    for (const auto& b : c.bins) {
        CHECK(b.mean_r2 < 6 * null_level);
        CHECK(b.mean_r2 > 0);
    }
}

TEST_CASE("bin pair counts sum to the number of valid same-chromosome pairs") {
    GenoSimConfig cfg;
    cfg.n = 300;
    cfg.l = 48;
    auto g = simulate_genotypes(cfg, 64);
    const auto c = ld_decay(g, 50, 50);
    int64_t total = 0;
    for (const auto& b : c.all_bins) total += b.count;
    CHECK(total == c.valid_pairs);
}

TEST_CASE("consistent chromosome relabeling leaves the curve unchanged") {
    GenoSimConfig cfg;
    cfg.n = 300;
    cfg.l = 32;
    auto g = simulate_genotypes(cfg, 65);
    auto vars = g.variants();
    for (auto& v : vars) v.chrom = 7; // relabel 1 -> 7 everywhere
    std::vector<uint8_t> dosages(static_cast<size_t>(g.n() * g.l()));
    for (int64_t i = 0; i < g.n(); ++i)
        for (int64_t j = 0; j < g.l(); ++j)
            dosages[static_cast<size_t>(i * g.l() + j)] = g.dosage(i, j);
    GenotypeMatrix g2(g.n(), g.l(), dosages, vars);
    const auto a = ld_decay(g, 50, 10);
    const auto b = ld_decay(g2, 50, 10);
    CHECK(a.spearman_rho == doctest::Approx(b.spearman_rho));
    REQUIRE(a.bins.size() == b.bins.size());
    for (size_t i = 0; i < a.bins.size(); ++i)
        CHECK(a.bins[i].mean_r2 == doctest::Approx(b.bins[i].mean_r2));
}

TEST_CASE("no same-chromosome pairs raises an error") {
    std::vector<Variant> vars{{1, 1000, 'A', 'G'}, {2, 500, 'A', 'G'}};
    auto g = with_variants({0, 1, 1, 0, 2, 1, 0, 2}, 4, 2, vars);
    CHECK_THROWS_WITH_AS(ld_decay(g), doctest::Contains("same-chromosome"), std::runtime_error);
}
