#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "snpforge/assoc.hpp"
#include "snpforge/ldstats.hpp"
#include "snpforge/simgen.hpp"

using namespace snpforge;

namespace {

GenotypeMatrix column_matrix(const std::vector<std::vector<uint8_t>>& cols) {
    const auto l = static_cast<int64_t>(cols.size());
    const auto n = static_cast<int64_t>(cols[0].size());
    std::vector<uint8_t> dosages(static_cast<size_t>(n * l));
    std::vector<Variant> vars(static_cast<size_t>(l));
    for (int64_t j = 0; j < l; ++j) {
        vars[static_cast<size_t>(j)] = {1, 1000 + 500 * static_cast<uint64_t>(j), 'A', 'G'};
        for (int64_t i = 0; i < n; ++i)
            dosages[static_cast<size_t>(i * l + j)] = cols[static_cast<size_t>(j)][static_cast<size_t>(i)];
    }
    return GenotypeMatrix(n, l, dosages, vars);
}

// Independent oracle: full 2-parameter Newton fit on the exact log-likelihood
// with finite-difference derivatives. Shares no code with the IRLS path.
std::pair<double, double> logistic_fit_oracle(const std::vector<uint8_t>& x,
                                              const std::vector<uint8_t>& y) {
    auto nll = [&](double a, double b) {
        double acc = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            const double eta = a + b * x[i];
            // log(1 + e^eta) - y*eta, numerically stable
            const double m = std::max(eta, 0.0);
            acc += m + std::log(std::exp(-m) + std::exp(eta - m)) - y[i] * eta;
        }
        return acc;
    };
    double a = 0, b = 0;
    const double h = 1e-5;
    for (int it = 0; it < 200; ++it) {
        const double ga = (nll(a + h, b) - nll(a - h, b)) / (2 * h);
        const double gb = (nll(a, b + h) - nll(a, b - h)) / (2 * h);
        const double haa = (nll(a + h, b) - 2 * nll(a, b) + nll(a - h, b)) / (h * h);
        const double hbb = (nll(a, b + h) - 2 * nll(a, b) + nll(a, b - h)) / (h * h);
        const double hab = (nll(a + h, b + h) - nll(a + h, b - h) - nll(a - h, b + h) +
                            nll(a - h, b - h)) /
                           (4 * h * h);
        const double det = haa * hbb - hab * hab;
        if (std::abs(det) < 1e-12) break;
        const double da = (hbb * ga - hab * gb) / det;
        const double db = (haa * gb - hab * ga) / det;
        a -= da;
        b -= db;
        if (std::abs(da) + std::abs(db) < 1e-10) break;
    }
    return {a, b};
}

} // namespace

TEST_CASE("permuted labels give small betas and roughly uniform p") {
    GenoSimConfig cfg;
    cfg.n = 2000;
    cfg.l = 64;
    cfg.recomb = 1.0;
    auto g = simulate_genotypes(cfg, 31);
    Rng rng(32);
    PhenotypeVector y;
    for (int64_t i = 0; i < g.n(); ++i) y.labels.push_back(rng.uniform() < 0.3);
    const auto gw = gwas_univariate(g, y);
    int64_t small = 0, low_p = 0;
    for (const auto& r : gw.rows) {
        small += std::abs(r.beta) < 0.5;
        low_p += r.p < 0.05;
    }
    CHECK(small == static_cast<int64_t>(gw.rows.size()));
    CHECK(low_p <= 10); // ~5% expected under the null
}

TEST_CASE("a perfectly predictive SNP is flagged as separation with |beta| = 10") {
    std::vector<uint8_t> snp, y;
    for (int i = 0; i < 50; ++i) {
        snp.push_back(i < 25 ? 0 : 2);
        y.push_back(i < 25 ? 0 : 1);
    }
    auto g = column_matrix({snp});
    PhenotypeVector ph;
    ph.labels = y;
    const auto gw = gwas_univariate(g, ph);
    CHECK(gw.rows[0].flag == GwasFlag::separation);
    CHECK(std::abs(gw.rows[0].beta) == doctest::Approx(10.0));
}

TEST_CASE("monomorphic SNPs are flagged with beta 0 and p 1") {
    std::vector<uint8_t> snp(40, 1), y;
    for (int i = 0; i < 40; ++i) y.push_back(i % 2);
    auto g = column_matrix({snp});
    PhenotypeVector ph;
    ph.labels = y;
    const auto gw = gwas_univariate(g, ph);
    CHECK(gw.rows[0].flag == GwasFlag::monomorphic);
    CHECK(gw.rows[0].beta == 0.0);
    CHECK(gw.rows[0].p == 1.0);
}

TEST_CASE("IRLS matches an independent Newton oracle on random contingency tables") {
    Rng rng(37);
    int checked = 0;
    for (int rep = 0; rep < 30 && checked < 20; ++rep) {
        // counts per (dosage, label) cell, kept away from separation
        std::vector<uint8_t> x, y;
        bool ok = true;
        for (int d = 0; d <= 2; ++d) {
            const auto n1 = 3 + rng.below(20);
            const auto n0 = 3 + rng.below(20);
            for (uint64_t i = 0; i < n1; ++i) {
                x.push_back(static_cast<uint8_t>(d));
                y.push_back(1);
            }
            for (uint64_t i = 0; i < n0; ++i) {
                x.push_back(static_cast<uint8_t>(d));
                y.push_back(0);
            }
            ok = ok && n1 > 0 && n0 > 0;
        }
        if (!ok) continue;
        auto g = column_matrix({x});
        PhenotypeVector ph;
        ph.labels = y;
        const auto gw = gwas_univariate(g, ph);
        if (gw.rows[0].flag != GwasFlag::ok) continue;
        const auto [oa, ob] = logistic_fit_oracle(x, y);
        CHECK(gw.rows[0].beta == doctest::Approx(ob).epsilon(1e-6));
        ++checked;
    }
    CHECK(checked >= 20);
}

TEST_CASE("GWAS betas are antisymmetric under allele flip") {
    GenoSimConfig cfg;
    cfg.n = 500;
    cfg.l = 8;
    auto g = simulate_genotypes(cfg, 41);
    Rng rng(42);
    PhenotypeVector y;
    for (int64_t i = 0; i < g.n(); ++i)
        y.labels.push_back(rng.uniform() < 0.2 + 0.3 * (g.dosage(i, 0) > 0));
    // flipped copy: dosage -> 2 - dosage
    std::vector<uint8_t> flipped(static_cast<size_t>(g.n() * g.l()));
    for (int64_t i = 0; i < g.n(); ++i)
        for (int64_t j = 0; j < g.l(); ++j)
            flipped[static_cast<size_t>(i * g.l() + j)] = static_cast<uint8_t>(2 - g.dosage(i, j));
    GenotypeMatrix gf(g.n(), g.l(), flipped, g.variants());
    const auto a = gwas_univariate(g, y);
    const auto b = gwas_univariate(gf, y);
    for (int64_t j = 0; j < g.l(); ++j) {
        const auto ju = static_cast<size_t>(j);
        if (a.rows[ju].flag != GwasFlag::ok || b.rows[ju].flag != GwasFlag::ok) continue;
        CHECK(a.rows[ju].beta == doctest::Approx(-b.rows[ju].beta).epsilon(1e-8));
        CHECK(a.rows[ju].p == doctest::Approx(b.rows[ju].p).epsilon(1e-8));
    }
}

TEST_CASE("clumping keeps the better of two perfectly correlated neighbours") {
    std::vector<uint8_t> snp_a, snp_b, snp_far, y;
    Rng rng(43);
    for (int i = 0; i < 200; ++i) {
        const auto d = static_cast<uint8_t>(rng.below(3));
        snp_a.push_back(d);
        snp_b.push_back(d); // identical -> r^2 = 1
        snp_far.push_back(static_cast<uint8_t>(rng.below(3)));
        y.push_back(rng.uniform() < 0.2 + 0.2 * d);
    }
    auto g = column_matrix({snp_a, snp_b, snp_far});
    PhenotypeVector ph;
    ph.labels = y;
    const auto gw = gwas_univariate(g, ph);
    const auto panel = ld_clump(gw, g, 10000, 0.5);
    // exactly one of the correlated pair survives
    int in_pair = 0;
    for (const auto j : panel.indices) in_pair += j == 0 || j == 1;
    CHECK(in_pair == 1);
}

TEST_CASE("threshold 1.0 disables pruning") {
    GenoSimConfig cfg;
    cfg.n = 300;
    cfg.l = 32;
    cfg.recomb = 0.0;
    cfg.founders = 2;
    auto g = simulate_genotypes(cfg, 44);
    Rng rng(45);
    PhenotypeVector y;
    for (int64_t i = 0; i < g.n(); ++i) y.labels.push_back(rng.uniform() < 0.4);
    const auto gw = gwas_univariate(g, y);
    const auto panel = ld_clump(gw, g, 1000000, 1.0);
    CHECK(panel.indices.size() == static_cast<size_t>(g.l()));
}

TEST_CASE("clumping matches an O(L^2) brute-force reference on simulated blocks") {
    GenoSimConfig cfg;
    cfg.n = 400;
    cfg.l = 48;
    cfg.blocks = 6;
    cfg.recomb = 0.02;
    auto g = simulate_genotypes(cfg, 46);
    Rng rng(47);
    PhenotypeVector y;
    for (int64_t i = 0; i < g.n(); ++i)
        y.labels.push_back(rng.uniform() < 0.2 + 0.15 * (g.dosage(i, 3) > 0));
    const auto gw = gwas_univariate(g, y);
    const uint64_t window = 10000;
    const double thr = 0.5;
    const auto panel = ld_clump(gw, g, window, thr);

    // brute force with independent r^2 computation
    std::vector<int64_t> order(gw.rows.size());
    std::iota(order.begin(), order.end(), int64_t{0});
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (gw.rows[static_cast<size_t>(a)].p != gw.rows[static_cast<size_t>(b)].p)
            return gw.rows[static_cast<size_t>(a)].p < gw.rows[static_cast<size_t>(b)].p;
        return a < b;
    });
    std::vector<int64_t> kept;
    for (const auto j : order) {
        bool pruned = false;
        for (const auto k : kept) {
            const auto& vj = g.variants()[static_cast<size_t>(j)];
            const auto& vk = g.variants()[static_cast<size_t>(k)];
            if (vj.chrom != vk.chrom) continue;
            const uint64_t dist = vj.pos > vk.pos ? vj.pos - vk.pos : vk.pos - vj.pos;
            if (dist > window) continue;
            std::vector<double> cj, ck;
            for (int64_t i = 0; i < g.n(); ++i) {
                cj.push_back(g.dosage(i, j));
                ck.push_back(g.dosage(i, k));
            }
            const double r = pearson(cj, ck);
            if (std::isfinite(r) && r * r > thr) {
                pruned = true;
                break;
            }
        }
        if (!pruned) kept.push_back(j);
    }
    CHECK(panel.indices == kept);
}

TEST_CASE("select_top_l truncates by rank") {
    SnpPanel p;
    p.indices = {5, 2, 9, 1};
    CHECK(select_top_l(p, 10).indices == p.indices);
    CHECK(select_top_l(p, 1).indices == std::vector<int64_t>{5});
    CHECK(select_top_l(p, 2).indices == (std::vector<int64_t>{5, 2}));
}

TEST_CASE("prs hand examples and linearity") {
    auto g = column_matrix({{0, 1, 2}, {2, 0, 1}, {1, 1, 0}});
    SnpPanel panel;
    panel.indices = {0, 1, 2};

    const std::vector<double> zeros{0, 0, 0};
    for (const auto s : prs_score(g, zeros, panel)) CHECK(s == 0.0);

    SnpPanel single;
    single.indices = {0};
    const std::vector<double> one{1.0};
    const auto ss = prs_score(g, one, single);
    CHECK(ss[0] == 0.0);
    CHECK(ss[1] == 1.0);
    CHECK(ss[2] == 2.0);

    const std::vector<double> b1{0.5, -1.0, 2.0};
    const std::vector<double> b2{1.5, 0.25, -0.5};
    std::vector<double> bsum(3);
    for (int j = 0; j < 3; ++j) bsum[static_cast<size_t>(j)] = b1[static_cast<size_t>(j)] + b2[static_cast<size_t>(j)];
    const auto s1 = prs_score(g, b1, panel);
    const auto s2 = prs_score(g, b2, panel);
    const auto s12 = prs_score(g, bsum, panel);
    for (int i = 0; i < 3; ++i)
        CHECK(s12[static_cast<size_t>(i)] ==
              doctest::Approx(s1[static_cast<size_t>(i)] + s2[static_cast<size_t>(i)]));

    // hand-computed dot products
    CHECK(s1[0] == doctest::Approx(0 * 0.5 + 2 * -1.0 + 1 * 2.0));
    CHECK(s1[1] == doctest::Approx(1 * 0.5 + 0 * -1.0 + 1 * 2.0));
    CHECK(s1[2] == doctest::Approx(2 * 0.5 + 1 * -1.0 + 0 * 2.0));

    CHECK_THROWS_AS(prs_score(g, one, panel), std::invalid_argument);
}

TEST_CASE("external prs flips on a negative spearman") {
    std::vector<uint8_t> snp{0, 0, 1, 1, 2, 2};
    std::vector<uint8_t> y{1, 1, 1, 0, 0, 0}; // anti-correlated with the dosage
    auto g = column_matrix({snp});
    PhenotypeVector ph;
    ph.labels = y;
    SnpPanel panel;
    panel.indices = {0};
    const std::vector<double> betas{1.0};
    const auto scores = external_prs(g, betas, panel, ph);
    std::vector<double> yd(y.begin(), y.end());
    CHECK(spearman(scores, yd) >= 0);

    const std::vector<double> zero{0.0};
    for (const auto s : external_prs(g, zero, panel, ph)) CHECK(s == 0.0);
}

TEST_CASE("roc_auc matches hand-enumerated pair counting") {
    const std::vector<double> perfect{0.1, 0.2, 0.9, 0.95};
    const std::vector<uint8_t> yp{0, 0, 1, 1};
    CHECK(roc_auc(perfect, yp) == doctest::Approx(1.0));

    const std::vector<double> flat{1, 1, 1, 1};
    CHECK(roc_auc(flat, yp) == doctest::Approx(0.5));

    // 6-point case with one tie, brute-force pair enumeration
    const std::vector<double> s{0.1, 0.4, 0.4, 0.35, 0.8, 0.05};
    const std::vector<uint8_t> y6{0, 1, 0, 1, 1, 0};
    double wins = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j) {
            if (!(y6[i] == 1 && y6[j] == 0)) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1;
            else if (s[i] == s[j]) wins += 0.5;
        }
    CHECK(roc_auc(s, y6) == doctest::Approx(wins / static_cast<double>(pairs)));

    // complement identity, exact
    std::vector<double> neg(s.size());
    for (size_t i = 0; i < s.size(); ++i) neg[i] = -s[i];
    CHECK(roc_auc(s, y6) + roc_auc(neg, y6) == 1.0);

    const std::vector<uint8_t> degenerate{1, 1, 1, 1, 1, 1};
    CHECK_THROWS_AS(roc_auc(s, degenerate), std::invalid_argument);
}

TEST_CASE("logistic ridge shrinks to the intercept as lambda grows") {
    GenoSimConfig cfg;
    cfg.n = 300;
    cfg.l = 8;
    auto g = simulate_genotypes(cfg, 51);
    Rng rng(52);
    PhenotypeVector y;
    for (int64_t i = 0; i < g.n(); ++i) y.labels.push_back(rng.uniform() < 0.3);
    SnpPanel panel;
    for (int64_t j = 0; j < g.l(); ++j) panel.indices.push_back(j);
    const auto model = logistic_ridge_fit(g, panel, y, 1e7);
    for (const auto c : model.coef) CHECK(std::abs(c) < 1e-3);
    const double ybar = static_cast<double>(y.n_cases()) / static_cast<double>(g.n());
    CHECK(model.intercept == doctest::Approx(std::log(ybar / (1 - ybar))).epsilon(0.01));
}

TEST_CASE("ridge at lambda 0 matches the univariate fit on a single SNP") {
    Rng rng(53);
    std::vector<uint8_t> snp, y;
    for (int i = 0; i < 400; ++i) {
        const auto d = static_cast<uint8_t>(rng.below(3));
        snp.push_back(d);
        y.push_back(rng.uniform() < 0.2 + 0.15 * d);
    }
    auto g = column_matrix({snp});
    PhenotypeVector ph;
    ph.labels = y;
    SnpPanel panel;
    panel.indices = {0};
    const auto gw = gwas_univariate(g, ph);
    REQUIRE(gw.rows[0].flag == GwasFlag::ok);
    const auto model = logistic_ridge_fit(g, panel, ph, 0.0);
    CHECK(model.coef[0] == doctest::Approx(gw.rows[0].beta).epsilon(1e-5));
}

TEST_CASE("ridge recovers the sign of a strong SNP") {
    Rng rng(54);
    std::vector<uint8_t> strong, noise, y;
    for (int i = 0; i < 500; ++i) {
        const auto d = static_cast<uint8_t>(rng.below(3));
        strong.push_back(d);
        noise.push_back(static_cast<uint8_t>(rng.below(3)));
        y.push_back(rng.uniform() < 0.15 + 0.3 * d);
    }
    auto g = column_matrix({strong, noise});
    PhenotypeVector ph;
    ph.labels = y;
    SnpPanel panel;
    panel.indices = {0, 1};
    const auto model = logistic_ridge_fit(g, panel, ph, 1.0);
    const auto gw = gwas_univariate(g, ph);
    CHECK(model.coef[0] > 0);
    CHECK(gw.rows[0].beta > 0);
}

TEST_CASE("gwas tsv and panel files round trip") {
    GenoSimConfig cfg;
    cfg.n = 100;
    cfg.l = 12;
    auto g = simulate_genotypes(cfg, 55);
    Rng rng(56);
    PhenotypeVector y;
    for (int64_t i = 0; i < g.n(); ++i) y.labels.push_back(rng.uniform() < 0.4);
    const auto gw = gwas_univariate(g, y);
    write_gwas_tsv("assoc_gwas_test.tsv", gw);
    const auto back = read_gwas_tsv("assoc_gwas_test.tsv");
    REQUIRE(back.rows.size() == gw.rows.size());
    for (size_t j = 0; j < gw.rows.size(); ++j) {
        CHECK(back.rows[j].snp_id == gw.rows[j].snp_id);
        CHECK(back.rows[j].beta == doctest::Approx(gw.rows[j].beta));
        CHECK(back.rows[j].flag == gw.rows[j].flag);
    }
    const auto panel = ld_clump(gw, g, 10000, 0.5);
    write_panel("assoc_panel_test.tsv", panel, g);
    const auto panel_back = read_panel("assoc_panel_test.tsv", g);
    CHECK(panel_back.indices == panel.indices);
    CHECK(panel_back.window_bp == panel.window_bp);
    std::remove("assoc_gwas_test.tsv");
    std::remove("assoc_panel_test.tsv");
}
